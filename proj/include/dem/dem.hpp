#pragma once

// Umbrella header for the whole library.

#include "ablation.hpp"
#include "calibration.hpp"
#include "cbp.hpp"
#include "checkpoint.hpp"
#include "column_loss.hpp"
#include "config.hpp"
#include "da_losses.hpp"
#include "dataset_io.hpp"
#include "error.hpp"
#include "evolution.hpp"
#include "metrics.hpp"
#include "nn_core.hpp"
#include "policy.hpp"
#include "random.hpp"
#include "replay_buffer.hpp"
#include "report.hpp"
#include "synth_domains.hpp"
#include "training.hpp"
