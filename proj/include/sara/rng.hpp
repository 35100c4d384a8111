#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sara/tensor.hpp"

namespace sara {

// Seeded random source with a serializable state. All randomness in the
// library flows through explicit Rng handles.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    // Independent stream derived from (seed, stream, counter); used for
    // counter-based data generation that must not depend on call order.
    static Rng derive(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter);

    double uniform();  // [0, 1)
    double uniform(double lo, double hi);
    double normal();
    std::uint64_t next_u64() { return engine_(); }
    std::size_t index(std::size_t n);  // uniform in [0, n)

    template <Scalar T>
    Tensor<T> normal_tensor(const Shape& shape);

    std::string state() const;
    void set_state(const std::string& s);

    bool operator==(const Rng& other) const { return state() == other.state(); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

}  // namespace sara
