#pragma once

#include "ltem/error.hpp"
#include "ltem/fixpoint.hpp"
#include "ltem/gaussian_ops.hpp"
#include "ltem/linalg.hpp"
#include "ltem/model.hpp"
#include "ltem/philox.hpp"
#include "ltem/random.hpp"
#include "ltem/sampling.hpp"
#include "ltem/star_em.hpp"
#include "ltem/topology.hpp"
#include "ltem/tree_em.hpp"
