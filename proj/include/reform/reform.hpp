#pragma once

#include "reform/bench.hpp"
#include "reform/config_file.hpp"
#include "reform/datasets.hpp"
#include "reform/embeddings.hpp"
#include "reform/error.hpp"
#include "reform/head_finder.hpp"
#include "reform/head_spec.hpp"
#include "reform/kv_cache.hpp"
#include "reform/model.hpp"
#include "reform/pipeline.hpp"
#include "reform/probe_model.hpp"
#include "reform/retrieval.hpp"
#include "reform/rfwt.hpp"
#include "reform/tokenizer.hpp"
#include "reform/weights.hpp"
