#pragma once

#include "lsdf/errors.hpp"
#include "lsdf/parallel.hpp"
#include "lsdf/binary_io.hpp"
#include "lsdf/core_grids.hpp"
#include "lsdf/primitives.hpp"
#include "lsdf/mesh.hpp"
#include "lsdf/robot_model.hpp"
#include "lsdf/sdf_precompute.hpp"
#include "lsdf/placement.hpp"
#include "lsdf/neural_approx.hpp"
#include "lsdf/assembly_query.hpp"
#include "lsdf/bench.hpp"
