#pragma once

#include "flowlink/analysis.hpp"
#include "flowlink/autodiff.hpp"
#include "flowlink/config.hpp"
#include "flowlink/dataset.hpp"
#include "flowlink/errors.hpp"
#include "flowlink/graph.hpp"
#include "flowlink/linegraph.hpp"
#include "flowlink/metrics.hpp"
#include "flowlink/model.hpp"
#include "flowlink/parallel.hpp"
#include "flowlink/params.hpp"
#include "flowlink/pipeline.hpp"
#include "flowlink/random.hpp"
#include "flowlink/subgraph.hpp"
#include "flowlink/train.hpp"
