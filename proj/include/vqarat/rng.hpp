#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "vqarat/tensor.hpp"

namespace vqarat {

// splitmix64: cheap deterministic seed mixing for derived streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline Tensor gaussian_tensor(Shape shape, double std_dev, std::mt19937_64& rng,
                              bool requires_grad = true) {
    std::normal_distribution<double> dist(0.0, std_dev);
    std::vector<double> data(numel(shape));
    for (double& x : data) x = dist(rng);
    return Tensor::leaf(std::move(shape), std::move(data), requires_grad);
}

inline Tensor const_tensor(Shape shape, double fill, bool requires_grad = true) {
    std::vector<double> data(numel(shape), fill);
    return Tensor::leaf(std::move(shape), std::move(data), requires_grad);
}

}  // namespace vqarat
