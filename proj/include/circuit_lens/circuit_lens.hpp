#pragma once

#include "circuit_lens/attribution.hpp"
#include "circuit_lens/directions.hpp"
#include "circuit_lens/error.hpp"
#include "circuit_lens/forward.hpp"
#include "circuit_lens/grammar.hpp"
#include "circuit_lens/hooks.hpp"
#include "circuit_lens/lexicon.hpp"
#include "circuit_lens/linalg.hpp"
#include "circuit_lens/model.hpp"
#include "circuit_lens/parallel.hpp"
#include "circuit_lens/patching.hpp"
#include "circuit_lens/pca.hpp"
#include "circuit_lens/planted.hpp"
#include "circuit_lens/io/csv.hpp"
#include "circuit_lens/io/hash.hpp"
#include "circuit_lens/io/json_io.hpp"
#include "circuit_lens/io/svg_heatmap.hpp"
#include "circuit_lens/io/tensor_file.hpp"
