#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mqt/common.hpp"

namespace mqt {

// Maximal run of one label; [start, stop) in output steps (0.08 s each).
struct Segment {
  int32_t label = 0;
  int start = 0;
  int stop = 0;

  int len() const { return stop - start; }
  double start_s() const { return start * kSecondsPerStep; }
  double stop_s() const { return stop * kSecondsPerStep; }
};

std::vector<Segment> label_segments(const LabelSeq& y);

struct ClassPrf {
  int label = 0;
  double precision = 0, recall = 0, f1 = 0;
  int64_t tp = 0, fp = 0, fn = 0;   // tp counts matched gold units
  int64_t tp_pred = 0;              // matched predicted units (micro precision)
  bool vacuous = false;             // nothing in gold or pred; scored as 1.0
};

struct PrfReport {
  std::vector<ClassPrf> per_class;
  double macro_p = 0, macro_r = 0, macro_f1 = 0;
  double micro_p = 0, micro_r = 0, micro_f1 = 0;
  int64_t units = 0;  // steps (timestep) or gold segments (instance)
};

// Per-step precision/recall/F1: counts pooled over all calls, then per-class
// scores, macro over all k classes including None. A class absent from both
// pred and gold scores 1.0 (so pred == gold always gives macro 1.0); F1 is 0
// whenever P + R is 0.
PrfReport timestep_prf(const std::vector<LabelSeq>& pred, const std::vector<LabelSeq>& gold,
                       int k);

// Segment-level scores over the question classes (label >= 1) only.
// A gold segment counts as recalled when >= min_run consecutive steps inside
// it carry its label. A predicted maximal run shorter than min_run is
// ignored; a run of >= min_run steps is a false positive unless it overlaps
// some gold segment of its label by >= min_run steps.
PrfReport instance_prf(const std::vector<LabelSeq>& pred, const std::vector<LabelSeq>& gold,
                       int k, int min_run = 5);

struct Confusion {
  int k = 0;
  std::vector<int64_t> counts;  // row = gold, col = pred
  int64_t total = 0, errors = 0;
  int64_t question_to_question = 0;  // errors with both labels != None
  int64_t at(int gold, int pred) const { return counts[static_cast<size_t>(gold) * k + pred]; }
  double question_confusion_share() const {
    return errors ? static_cast<double>(question_to_question) / static_cast<double>(errors) : 0.0;
  }
};

Confusion confusion(const std::vector<LabelSeq>& pred, const std::vector<LabelSeq>& gold, int k);

// Signed boundary errors in seconds for instance-matched segment pairs.
// Positive means the prediction extends outside the gold span on that side.
struct MarginStats {
  std::vector<double> start_errors, stop_errors;
  double mean_start = 0, mean_stop = 0;
};

MarginStats margin_stats(const std::vector<LabelSeq>& pred, const std::vector<LabelSeq>& gold,
                         int k, int min_run = 5);

// Micro F1 over the question classes for calls bucketed by corruption level.
// Bins are half-open [edges[i], edges[i+1]).
struct NoiseBin {
  double lo = 0, hi = 0;
  int n_calls = 0;
  double micro_f1 = 0;  // excluding None
};

std::vector<NoiseBin> noise_binned_f1(const std::vector<LabelSeq>& pred,
                                      const std::vector<LabelSeq>& gold,
                                      const std::vector<double>& levels,
                                      const std::vector<double>& edges, int k);

// Line format used in logs and run reports.
std::string prf_to_line(const std::string& name, const PrfReport& r);
std::string prf_to_table(const std::string& name, const PrfReport& r);

}  // namespace mqt
