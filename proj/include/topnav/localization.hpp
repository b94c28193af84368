#pragma once

#include <stdexcept>

#include "topnav/perception.hpp"
#include "topnav/sim.hpp"
#include "topnav/topomap.hpp"

namespace topnav::loc {

struct LocalizationResult {
    int node = -1;             // best-scoring node (ties -> lowest id)
    double score = -2.0;       // its best dot product over stored headings
    int runner_up = -1;        // second-best node, -1 for single-node maps
    double runner_score = -2.0;
    double margin = 0.0;       // score - runner_score (>= 0)
};

/// Score of one node: max dot product between the query descriptor and the
/// node's stored heading descriptors. Descriptors are unit-norm, so this is
/// cosine similarity.
inline double node_score(const tmap::MapView& view, int node, const percep::Descriptor& query) {
    double best = -2.0;
    for (const percep::Descriptor& d : view.descriptors(node)) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d.values.size(); ++i) dot += d.values[i] * query.values[i];
        if (dot > best) best = dot;
    }
    return best;
}

inline LocalizationResult localize(const tmap::MapView& view, const percep::Descriptor& query) {
    if (view.size() == 0) throw std::invalid_argument("localize: empty map");
    LocalizationResult r;
    for (int n = 0; n < view.size(); ++n) {
        const double s = node_score(view, n, query);
        if (s > r.score) {
            r.runner_up = r.node;
            r.runner_score = r.score;
            r.node = n;
            r.score = s;
        } else if (s > r.runner_score) {
            r.runner_up = n;
            r.runner_score = s;
        }
    }
    r.margin = view.size() > 1 ? r.score - r.runner_score : 0.0;
    return r;
}

inline LocalizationResult localize_observation(const tmap::MapView& view,
                                               const percep::FeatureExtractor& fx,
                                               const sim::RayObservation& obs) {
    return localize(view, percep::extract_descriptor(fx, obs));
}

/// True once the current descriptor is close enough to the goal descriptor.
inline bool goal_reached_check(const percep::Descriptor& current, const percep::Descriptor& goal,
                               double threshold = 0.95) {
    return percep::cosine(current, goal) >= threshold;
}

}  // namespace topnav::loc
