#pragma once

#include <map>
#include <string>
#include <vector>

namespace msms {

enum class ObsKind { IntervalCensored, ExactLiving, CensoredState, ExactDeath };

// One (subject, interval) row of the longitudinal panel. States are 0-based
// inside the library; file formats use 1-based labels.
struct ObservationRecord {
    std::string subject;
    double t_prev = 0.0;
    double t_cur = 0.0;
    int z_prev = 0;
    int z_cur = 0;                           // ignored for CensoredState
    ObsKind kind = ObsKind::IntervalCensored;
    std::vector<int> state_set;              // CensoredState candidates
    std::map<std::string, double> covariates;  // values at the interval start
};

using Panel = std::vector<ObservationRecord>;

inline const char* to_string(ObsKind k) {
    switch (k) {
        case ObsKind::IntervalCensored: return "interval-censored";
        case ObsKind::ExactLiving: return "exact-living";
        case ObsKind::CensoredState: return "censored-state";
        case ObsKind::ExactDeath: return "exact-death";
    }
    return "?";
}

}  // namespace msms
