#pragma once

#include "modsel/environment.hpp"
#include "modsel/rng.hpp"

namespace modsel {

// Uniform contextual-bandit learner interface: choose an action from the
// per-action features, then receive the chosen action's loss.
class Learner {
public:
    virtual ~Learner() = default;

    virtual int act(const ActionFeatures& features, Rng& rng) = 0;
    virtual void update(const ActionFeatures& features, int action, double loss) = 0;

    // Round-log metadata. active_class is the 0-based candidate class index
    // for class-selecting learners and -1 otherwise.
    virtual bool explored_last() const { return false; }
    virtual int active_class() const { return -1; }
};

}  // namespace modsel
