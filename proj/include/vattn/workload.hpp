#pragma once

#include "vattn/rng.hpp"
#include "vattn/tensor.hpp"

namespace vattn {

// Standard-normal workload tensor rounded to binary16. Distinct streams
// decorrelate the tensors generated from one seed (Q/K/V/dO use 1/2/3/4).
inline Tensor<Half> normal_tensor_f16(uint64_t seed, uint64_t stream,
                                      const std::vector<std::size_t>& dims) {
    Tensor<Half> t(dims);
    const uint64_t base = hash_combine(seed, stream);
    for (std::size_t i = 0; i < t.size(); ++i)
        t.data()[i] = f32_to_f16(normal_at(base, i));
    return t;
}

}  // namespace vattn
