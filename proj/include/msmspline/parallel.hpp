#pragma once

#include <functional>

namespace msms {

// Worker count: explicit request wins, then MSMSPLINE_THREADS, then the
// hardware concurrency.
int worker_count(int requested = 0);

// Runs f(i) for i in [0, n). Work items must write to preallocated slots;
// callers fix the reduction order themselves, so the outcome does not depend
// on the number of workers.
void parallel_for(int n, const std::function<void(int)>& f, int threads = 0);

}  // namespace msms
