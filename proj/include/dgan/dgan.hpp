#pragma once

#include "dgan/adam.hpp"
#include "dgan/checkpoint.hpp"
#include "dgan/config.hpp"
#include "dgan/data.hpp"
#include "dgan/gradcheck.hpp"
#include "dgan/gradcheck_suite.hpp"
#include "dgan/image_io.hpp"
#include "dgan/losses.hpp"
#include "dgan/metrics.hpp"
#include "dgan/models.hpp"
#include "dgan/nn.hpp"
#include "dgan/rng.hpp"
#include "dgan/tensor.hpp"
#include "dgan/trainer.hpp"
