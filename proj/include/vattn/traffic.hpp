#pragma once

#include <cstdint>

namespace vattn {

// Modeled HBM and warp-level cost events. matrix_pass_* count logical
// full-tensor passes over HBM; element_* count every tensor element crossing
// the modeled HBM boundary. shuffle_events and convert_events are scoped to
// the online-softmax data path: they expose the FP32-ACC shuffle versus
// FP16-ACC type-conversion trade-off and stay zero for the opposite mode.
struct TrafficCounter {
    uint64_t matrix_pass_reads = 0;
    uint64_t matrix_pass_writes = 0;
    uint64_t element_reads = 0;
    uint64_t element_writes = 0;
    uint64_t mma_invocations = 0;
    uint64_t shuffle_events = 0;
    uint64_t convert_events = 0;

    TrafficCounter& operator+=(const TrafficCounter& o) {
        matrix_pass_reads += o.matrix_pass_reads;
        matrix_pass_writes += o.matrix_pass_writes;
        element_reads += o.element_reads;
        element_writes += o.element_writes;
        mma_invocations += o.mma_invocations;
        shuffle_events += o.shuffle_events;
        convert_events += o.convert_events;
        return *this;
    }
};

}  // namespace vattn
