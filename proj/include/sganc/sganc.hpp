#pragma once

#include "sganc/autodiff.hpp"
#include "sganc/bytes.hpp"
#include "sganc/codec.hpp"
#include "sganc/entropy_model.hpp"
#include "sganc/error.hpp"
#include "sganc/flow.hpp"
#include "sganc/irwin_hall.hpp"
#include "sganc/latent.hpp"
#include "sganc/pipeline.hpp"
#include "sganc/rans.hpp"
#include "sganc/synth.hpp"
#include "sganc/trainer.hpp"
