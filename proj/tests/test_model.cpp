#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "qhd/model.hpp"

using namespace qhd;
using Catch::Approx;

namespace {
const PhysicalParams paper_phys{};
const SuperpositionParams paper_sup{};
const CaseSelector coupled_case{true};
const CaseSelector uncoupled_case{false};
}  // namespace

TEST_CASE("stiffness and derived constants match the model parameters") {
    CHECK(paper_phys.stiffness() == Approx(2000.0 * 0.004556 * 0.004556).epsilon(1e-15));
    CHECK(paper_phys.m * paper_phys.omega / paper_phys.hbar == Approx(9.112).epsilon(1e-12));
}

TEST_CASE("potential values") {
    CHECK(potential(paper_phys, coupled_case, {0.0, 0.0}) == 0.0);
    CHECK(potential(paper_phys, uncoupled_case, {0.0, 0.0}) == 0.0);
    // coupled, (1,1): k/2 + c
    CHECK(potential(paper_phys, coupled_case, {1.0, 1.0}) ==
          Approx(0.0357571).margin(1e-6));
    // uncoupled: free motion along x
    CHECK(potential(paper_phys, uncoupled_case, {5.0, 0.0}) == 0.0);
    CHECK(potential(paper_phys, uncoupled_case, {5.0, 0.3}) ==
          potential(paper_phys, uncoupled_case, {-2.0, 0.3}));
}

TEST_CASE("potential gradient is analytically exact") {
    const Vec2 at_origin = potential_gradient_force(paper_phys, coupled_case, {0.0, 0.0});
    CHECK(at_origin.x == 0.0);
    CHECK(at_origin.y == 0.0);

    const Vec2 f = potential_gradient_force(paper_phys, coupled_case, {1.0, 0.0});
    CHECK(f.x == Approx(0.0).margin(1e-15));
    CHECK(f.y == Approx(-0.015).epsilon(1e-15));

    const double k = paper_phys.stiffness();
    std::mt19937 rng(42);
    std::uniform_real_distribution<double> dist(-5.0, 5.0);
    for (int i = 0; i < 20; ++i) {
        const double x0 = dist(rng), y0 = dist(rng);
        const Vec2 g = potential_gradient_force(paper_phys, uncoupled_case, {x0, y0});
        CHECK(g.x == 0.0);
        CHECK(g.y == Approx(-k * y0).epsilon(1e-14));
    }
}

TEST_CASE("gradient is consistent with central finite differences of the potential") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> dist(-5.0, 5.0);
    const double h = 1e-5;
    for (const CaseSelector& cs : {coupled_case, uncoupled_case}) {
        for (int i = 0; i < 100; ++i) {
            const Vec2 p{dist(rng), dist(rng)};
            const double fx = -(potential(paper_phys, cs, {p.x + h, p.y}) -
                                potential(paper_phys, cs, {p.x - h, p.y})) /
                              (2.0 * h);
            const double fy = -(potential(paper_phys, cs, {p.x, p.y + h}) -
                                potential(paper_phys, cs, {p.x, p.y - h})) /
                              (2.0 * h);
            const Vec2 g = potential_gradient_force(paper_phys, cs, p);
            const double scale = std::max({std::abs(fx), std::abs(fy), 1e-6});
            CHECK(std::abs(g.x - fx) / scale < 1e-6);
            CHECK(std::abs(g.y - fy) / scale < 1e-6);
        }
    }
}

TEST_CASE("coupled potential is invariant under point reflection") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> dist(-5.0, 5.0);
    for (int i = 0; i < 50; ++i) {
        const Vec2 p{dist(rng), dist(rng)};
        CHECK(potential(paper_phys, coupled_case, p) ==
              Approx(potential(paper_phys, coupled_case, {-p.x, -p.y})).epsilon(1e-14));
    }
}

TEST_CASE("initial wavefunction is real, positive and x-symmetric") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    for (int i = 0; i < 50; ++i) {
        const Vec2 p{dist(rng), dist(rng)};
        const PolarValue v = initial_wavefunction(paper_phys, paper_sup, p);
        CHECK(v.S == 0.0);
        CHECK(v.R > 0.0);
        const PolarValue mirror = initial_wavefunction(paper_phys, paper_sup, {-p.x, p.y});
        CHECK(v.R == Approx(mirror.R).epsilon(1e-13));
    }
}

TEST_CASE("initial bath factor carries alpha = m omega / hbar") {
    // R(x, y) / R(x, 0) = exp(-alpha y^2 / 2)
    const double alpha = paper_phys.m * paper_phys.omega / paper_phys.hbar;
    const double r0 = initial_wavefunction(paper_phys, paper_sup, {0.3, 0.0}).R;
    const double r1 = initial_wavefunction(paper_phys, paper_sup, {0.3, 0.7}).R;
    CHECK(std::log(r0 / r1) == Approx(0.5 * alpha * 0.49).epsilon(1e-12));
    CHECK(alpha == Approx(9.112).epsilon(1e-12));
}

TEST_CASE("initial density is unit normalized (2-D quadrature oracle)") {
    // Midpoint rule over a box that captures the Gaussian tails to well below
    // the 1e-10 tolerance; the rule converges exponentially for Gaussians.
    const double hx = 0.01, hy = 0.005;
    double sum = 0.0;
    for (double x = -5.0 + hx / 2; x < 5.0; x += hx)
        for (double y = -2.5 + hy / 2; y < 2.5; y += hy)
            sum += initial_density(paper_phys, paper_sup, {x, y});
    sum *= hx * hy;
    CHECK(sum == Approx(1.0).margin(1e-10));
}

TEST_CASE("initial peak density sits near the Gaussian centers") {
    const double peak = initial_peak_density(paper_phys, paper_sup);
    CHECK(peak == Approx(1.4368).epsilon(1e-3));
    CHECK(peak >= initial_density(paper_phys, paper_sup, {0.8, 0.0}));
}

TEST_CASE("valley direction") {
    const double theta = valley_direction(paper_phys, coupled_case);
    CHECK(theta == Approx(-19.8659).margin(5e-3));
    // consistent with the stated -19 degrees within 1.5
    CHECK(std::abs(theta - (-19.0)) < 1.5);

    CHECK_THROWS_AS(valley_direction(paper_phys, uncoupled_case), ConfigError);

    PhysicalParams symmetric = paper_phys;
    symmetric.c = symmetric.stiffness();
    CHECK(valley_direction(symmetric, coupled_case) == Approx(-45.0).epsilon(1e-12));
}

TEST_CASE("parameter validation") {
    PhysicalParams bad = paper_phys;
    bad.m0 = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = paper_phys;
    bad.hbar = 2.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    SuperpositionParams bad_sup;
    bad_sup.beta = 0.0;
    CHECK_THROWS_AS(bad_sup.validate(), ConfigError);
}
