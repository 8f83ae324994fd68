#pragma once

#include <cstddef>

namespace panelfilter {

// Worker count used by particle- and run-level loops. Results never depend on
// this value.
void set_num_threads(int n);
int num_threads();

// Reads PANELFILTER_THREADS; returns fallback when unset or invalid.
int threads_from_env(int fallback);

}  // namespace panelfilter
