#pragma once

#include "fewview/autodiff.hpp"
#include "fewview/camera.hpp"
#include "fewview/checkpoint.hpp"
#include "fewview/config.hpp"
#include "fewview/encoding.hpp"
#include "fewview/error.hpp"
#include "fewview/experiments.hpp"
#include "fewview/field.hpp"
#include "fewview/gradcheck.hpp"
#include "fewview/image.hpp"
#include "fewview/losses.hpp"
#include "fewview/metrics.hpp"
#include "fewview/optim.hpp"
#include "fewview/rendering.hpp"
#include "fewview/scenes.hpp"
#include "fewview/supervision.hpp"
#include "fewview/trainer.hpp"
