#pragma once

#include "fedcon/tensor.hpp"
#include "fedcon/rng.hpp"
#include "fedcon/parameters.hpp"
#include "fedcon/layers.hpp"
#include "fedcon/model.hpp"
#include "fedcon/losses.hpp"
#include "fedcon/optimizer.hpp"
#include "fedcon/dataset.hpp"
#include "fedcon/split.hpp"
#include "fedcon/augment.hpp"
#include "fedcon/server.hpp"
#include "fedcon/client.hpp"
#include "fedcon/evaluation.hpp"
#include "fedcon/federation.hpp"
#include "fedcon/checkpoint.hpp"
#include "fedcon/config.hpp"
#include "fedcon/metrics.hpp"
#include "fedcon/experiment.hpp"
#include "fedcon/plot.hpp"
#include "fedcon/synthetic.hpp"
