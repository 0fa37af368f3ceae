#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace modsel {

// Seedable deterministic random stream.
//
// Wraps std::mt19937_64 but produces uniforms and normals through its own
// code so that draws do not depend on the standard library's distribution
// implementations. Streams can be checkpointed as text and restored
// bit-exactly, which the simulation harness relies on for replay.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : Rng({seed}) {}

    Rng(std::initializer_list<std::uint64_t> keys) {
        std::seed_seq seq(keys.begin(), keys.end());
        engine_.seed(seq);
    }

    // Derives an independent stream from (seed, stream, index) keys.
    static Rng keyed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
        return Rng({seed, stream, index});
    }

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in {0, ..., n-1}.
    int uniform_int(int n) {
        if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
        int v = static_cast<int>(uniform01() * n);
        return v < n ? v : n - 1;
    }

    bool bernoulli(double p) { return uniform01() < p; }

    // Standard normal via the polar method; one spare draw is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::string save_state() const {
        std::ostringstream out;
        out << engine_ << ' ' << (has_spare_ ? 1 : 0);
        if (has_spare_) {
            out << ' ' << std::hexfloat << spare_;
        }
        return out.str();
    }

    void restore_state(const std::string& state) {
        std::istringstream in(state);
        in >> engine_;
        int spare_flag = 0;
        in >> spare_flag;
        has_spare_ = spare_flag != 0;
        spare_ = 0.0;
        if (has_spare_) {
            // std::hexfloat parsing of "0x1.8p+0" style literals is unreliable in
            // some libstdc++ versions, so parse via strtod.
            std::string tok;
            in >> tok;
            spare_ = std::strtod(tok.c_str(), nullptr);
        }
        if (in.fail()) throw std::invalid_argument("Rng::restore_state: malformed state string");
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace modsel
