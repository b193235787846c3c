#pragma once

#include "twins/tensor.hpp"
#include "twins/ops.hpp"
#include "twins/optim.hpp"
#include "twins/gradcheck.hpp"
#include "twins/config.hpp"
#include "twins/embedding.hpp"
#include "twins/patching.hpp"
#include "twins/attention.hpp"
#include "twins/model.hpp"
#include "twins/checkpoint.hpp"
#include "twins/data.hpp"
#include "twins/training.hpp"
#include "twins/analysis.hpp"
#include "twins/selfcheck.hpp"
