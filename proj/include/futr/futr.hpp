#pragma once

#include "futr/common.hpp"
#include "futr/config.hpp"
#include "futr/data.hpp"
#include "futr/evaluation.hpp"
#include "futr/gradcheck.hpp"
#include "futr/hungarian.hpp"
#include "futr/mask.hpp"
#include "futr/model.hpp"
#include "futr/objectives.hpp"
#include "futr/tensor.hpp"
#include "futr/training.hpp"
