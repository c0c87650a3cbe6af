#pragma once

#include "qhd/analysis.hpp"
#include "qhd/config.hpp"
#include "qhd/errors.hpp"
#include "qhd/geometry.hpp"
#include "qhd/hydro.hpp"
#include "qhd/mesh.hpp"
#include "qhd/model.hpp"
#include "qhd/mwls.hpp"
#include "qhd/oracle.hpp"
#include "qhd/parallel.hpp"
#include "qhd/point_cloud.hpp"
#include "qhd/snapshot_io.hpp"
