#pragma once

#include "bevssl/augment.hpp"
#include "bevssl/checkpoint.hpp"
#include "bevssl/config.hpp"
#include "bevssl/dataset.hpp"
#include "bevssl/error.hpp"
#include "bevssl/export.hpp"
#include "bevssl/geometry.hpp"
#include "bevssl/gradcheck.hpp"
#include "bevssl/losses.hpp"
#include "bevssl/metrics.hpp"
#include "bevssl/model.hpp"
#include "bevssl/optimizer.hpp"
#include "bevssl/param_set.hpp"
#include "bevssl/raster_io.hpp"
#include "bevssl/rng.hpp"
#include "bevssl/scenario.hpp"
#include "bevssl/ssl_engine.hpp"
#include "bevssl/synth_world.hpp"
#include "bevssl/tensor.hpp"
#include "bevssl/trainer.hpp"
