#pragma once

#include "clens/concept_dictionary.hpp"
#include "clens/error.hpp"
#include "clens/eval_text.hpp"
#include "clens/fixtures.hpp"
#include "clens/grounding.hpp"
#include "clens/matching.hpp"
#include "clens/pca.hpp"
#include "clens/report.hpp"
#include "clens/shift_analysis.hpp"
#include "clens/steering.hpp"
#include "clens/stats.hpp"
#include "clens/tensor_store.hpp"
