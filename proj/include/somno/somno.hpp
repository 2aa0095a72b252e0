#pragma once

// Umbrella header: the embedded sleep-staging inference engine.

#include "somno/tensor.hpp"
#include "somno/ops.hpp"
#include "somno/graph.hpp"
#include "somno/model_io.hpp"
#include "somno/zoo.hpp"
#include "somno/physio.hpp"
#include "somno/quant.hpp"
#include "somno/evalkit.hpp"
