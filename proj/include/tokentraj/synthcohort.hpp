#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "tokentraj/schema.hpp"

// Seeded synthetic cohorts with a planted severity signal, used for
// end-to-end testing without restricted data.  Each patient carries a latent
// severity z ~ N(0,1); static signal variables read z through feature noise,
// dynamic signal variables drift toward (or away from) z over the stay, and
// the ordinal outcome follows a proportional-odds model on z.

namespace tokentraj {

struct SynthConfig {
    int patients = 400;
    int static_signal = 6;
    int static_noise = 10;
    int dynamic_signal = 4;
    int dynamic_noise = 10;
    int text_vars = 0;          // optional static text variables keyed to z
    double noise_scale = 0.35;  // logistic noise on the outcome latent
    double feature_noise = 0.2; // gaussian noise on each observed value
    double missing_rate = 0.25;
    double missing_severity = 0.15; // added drop probability per unit sigmoid(z)-0.5, doubled
    double stay_meanlog = 4.277;    // log-hours; exp(4.277) ~ 72h median
    double stay_sdlog = 0.6;
    double stay_min_hours = 30.0;
    double stay_max_hours = 336.0;
    double obs_interval_hours = 1.0;
    std::array<double, kOutcomeClasses - 1> cutpoints = {-1.2, -0.65, -0.2, 0.2, 0.65, 1.2};
    std::uint64_t seed = 0;
};

// Reads synth_* keys from a flat key=value map, ignoring everything else.
SynthConfig synth_config_from_map(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> synth_config_to_map(const SynthConfig& cfg);

void validate_synth_config(const SynthConfig& cfg);

struct SynthCohort {
    VariableDictionary dictionary;
    std::vector<StayRecord> stays;
    std::vector<OutcomeLabel> outcomes;
    std::vector<double> latent; // true severity per stay, for oracle checks
};

SynthCohort generate_cohort(const SynthConfig& cfg);

void save_dictionary(const VariableDictionary& dict, const std::string& path);
void save_observations(const std::vector<StayRecord>& stays, const std::string& path);
void save_outcomes(const std::vector<OutcomeLabel>& outcomes, const std::string& path);

struct OracleDxy {
    double dxy = 0.0;
    double se = 0.0;
};

// Monte-Carlo estimate of the discrimination available to any model: Dxy of
// the true severity against outcomes drawn from it.  n_mc draws are split
// into 10 batches; returns the batch mean and its standard error.
OracleDxy planted_dxy_oracle(const SynthConfig& cfg, int n_mc);

}  // namespace tokentraj
