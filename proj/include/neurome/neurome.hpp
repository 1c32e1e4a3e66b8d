#pragma once

#include "neurome/align.hpp"
#include "neurome/config.hpp"
#include "neurome/data.hpp"
#include "neurome/error.hpp"
#include "neurome/experiment.hpp"
#include "neurome/io.hpp"
#include "neurome/mlp.hpp"
#include "neurome/optim.hpp"
#include "neurome/oracle.hpp"
#include "neurome/reconstruct.hpp"
#include "neurome/report.hpp"
#include "neurome/sampling.hpp"
#include "neurome/tensor.hpp"
