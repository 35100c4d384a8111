#include "sara/rng.hpp"

#include <sstream>

namespace sara {

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

Rng Rng::derive(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32)};
    Rng r;
    r.engine_.seed(seq);
    return r;
}

double Rng::uniform() {
    return std::generate_canonical<double, 53>(engine_);
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal() {
    return normal_(engine_);
}

std::size_t Rng::index(std::size_t n) {
    return static_cast<std::size_t>(engine_() % n);
}

template <Scalar T>
Tensor<T> Rng::normal_tensor(const Shape& shape) {
    Tensor<T> t(shape);
    for (T& v : t.data()) v = static_cast<T>(normal());
    return t;
}

template Tensor<float> Rng::normal_tensor<float>(const Shape&);
template Tensor<double> Rng::normal_tensor<double>(const Shape&);

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_;
    return os.str();
}

void Rng::set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_ >> normal_;
    if (!is) throw DomainError("rng: malformed state string");
}

}  // namespace sara
