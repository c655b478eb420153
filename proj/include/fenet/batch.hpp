#pragma once

#include <exception>
#include <vector>

#include <omp.h>

#include "fenet/tensor.hpp"

namespace fenet {

enum class ExecMode { serial, parallel };

// One scratch tape per OpenMP thread, reused across batches.
template <typename T>
class TapePool {
public:
    TapePool() : tapes_(static_cast<size_t>(omp_get_max_threads())) {}

    Tape<T>& local() { return tapes_[static_cast<size_t>(omp_get_thread_num())]; }
    Tape<T>& first() { return tapes_.front(); }

private:
    std::vector<Tape<T>> tapes_;
};

// Evaluates fn(i, tape) for i in [0, n) and returns the results by index.
// Work items are independent; the parallel path only changes which thread
// computes which slot, so the gathered results are identical to the serial
// path bit for bit and any reduction the caller performs in index order is
// schedule-independent.
template <typename Out, typename T, typename Fn>
std::vector<Out> map_chunks(int n, TapePool<T>& pool, ExecMode mode, Fn&& fn) {
    std::vector<Out> out(static_cast<size_t>(n));
    if (mode == ExecMode::parallel && n > 1) {
        std::exception_ptr error = nullptr;
#pragma omp parallel for schedule(dynamic, 1) shared(error)
        for (int i = 0; i < n; ++i) {
            if (error) continue;
            try {
                Tape<T>& tape = pool.local();
                tape.reset();
                out[static_cast<size_t>(i)] = fn(i, tape);
            } catch (...) {
#pragma omp critical
                if (!error) error = std::current_exception();
            }
        }
        if (error) std::rethrow_exception(error);
    } else {
        for (int i = 0; i < n; ++i) {
            Tape<T>& tape = pool.first();
            tape.reset();
            out[static_cast<size_t>(i)] = fn(i, tape);
        }
    }
    return out;
}

} // namespace fenet
