#pragma once

#include "kgrag/binary_io.hpp"
#include "kgrag/config.hpp"
#include "kgrag/engine.hpp"
#include "kgrag/errors.hpp"
#include "kgrag/eval_harness.hpp"
#include "kgrag/generation.hpp"
#include "kgrag/hash.hpp"
#include "kgrag/http_backend.hpp"
#include "kgrag/kg_store.hpp"
#include "kgrag/nlg_metrics.hpp"
#include "kgrag/pathology_head.hpp"
#include "kgrag/prompt_forge.hpp"
#include "kgrag/service.hpp"
#include "kgrag/stemmer.hpp"
#include "kgrag/vector_index.hpp"
