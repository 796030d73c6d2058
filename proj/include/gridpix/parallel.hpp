#pragma once

namespace gridpix::par {

// Worker count used by the OpenMP kernels. Defaults to the OpenMP runtime
// default; GRIDPIX_THREADS overrides it. All kernels partition work per
// output element with a fixed intra-element summation order, so results are
// bitwise identical for any thread count.
int threads();
void set_threads(int n);

// Reads GRIDPIX_THREADS from the environment (ignored if unset or invalid).
void init_from_env();

}  // namespace gridpix::par
