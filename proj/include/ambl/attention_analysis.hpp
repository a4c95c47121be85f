#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ambl/dyck.hpp"
#include "ambl/transformer.hpp"

namespace ambl::analysis {

// At least one negative and one non-negative entry in the depth profile.
bool is_mixed_depth(const dyck::ParenSequence& seq);

enum class Verdict { FavorsNegative, FavorsNonNegative, Neither };
std::string to_string(Verdict v);

struct DepthPreference {
  Verdict verdict = Verdict::Neither;
  std::optional<double> witness;  // midpoint of the separating interval
};

// Strict separation of the EOS row between negative- and non-negative-depth
// positions. Throws std::invalid_argument on length mismatch or when the
// profile is not mixed-depth.
DepthPreference depth_preference(std::span<const double> row, const dyck::DepthProfile& profile);
DepthPreference depth_preference(const model::EosAttentionRow& row, const dyck::DepthProfile& profile);

enum class DatasetTag { ID, OOD };
std::string to_string(DatasetTag t);

struct HeadClassification {
  int layer = 0;
  int head = 0;
  DatasetTag tag = DatasetTag::ID;
  bool is_hierarchical = false;
  bool is_negative_depth_detector = false;
  bool is_sign_matching = false;
  int mixed_depth_count = 0;
  int favors_negative = 0;
  int favors_non_negative = 0;
  int sign_matched = 0;

  double track_fraction() const;
};

// Verdict tallies for one head, turned into flags at `threshold`.
void apply_threshold(HeadClassification& c, double threshold);

// Attention of every head for one sequence; lets fixtures stand in for models.
using CaptureFn = std::function<model::AttentionCapture(const dyck::ParenSequence&)>;
CaptureFn model_capture(const model::ModelRecord& model);

// All heads of one model over the mixed-depth subset of `dataset`; one
// capture per sequence. Throws when the subset is empty.
std::vector<HeadClassification> classify_heads(int depth, int heads, const CaptureFn& capture,
                                               std::span<const dyck::ParenSequence> dataset, DatasetTag tag,
                                               double threshold = 0.8);

HeadClassification classify_head(const model::ModelRecord& model, int layer, int head,
                                 std::span<const dyck::ParenSequence> dataset, DatasetTag tag, double threshold = 0.8);

// --- population census ---------------------------------------------------------

struct CensusSubject {
  std::string run_id;
  int depth = 0;
  int heads = 0;
  CaptureFn capture;
};

struct CensusRow {
  std::string run_id;
  HeadClassification head;
};

// Head type used for the ID -> OOD cross-tabulation.
enum class HeadType { NotHierarchical, SignMatching, NegativeDepth, Both, OtherHierarchical };
std::string to_string(HeadType t);
HeadType head_type(const HeadClassification& c);

struct ModelHeadSummary {
  std::string run_id;
  int depth = 0;
  bool id_hierarchical = false;
  bool id_sign_matching = false;
  bool id_negative_depth = false;
  bool ood_hierarchical = false;
  int hierarchical_heads_first_layer = 0;  // either tag
};

struct CensusResult {
  std::vector<CensusRow> rows;  // (model, layer, head, tag) order, ID before OOD
  std::vector<ModelHeadSummary> models;
  // Fractions of the models that have an ID hierarchical head; zero when none do.
  double frac_models_sign_matching = 0.0;
  double frac_models_negative_depth = 0.0;
  double frac_models_both = 0.0;
  // cross_tab[id_type][ood_type] = head count
  std::map<HeadType, std::map<HeadType, int>> cross_tab;
  int id_hierarchical_heads = 0;
  int id_hierarchical_not_ood_hierarchical = 0;
  int id_sign_matching_heads = 0;
  int id_sign_matching_to_ood_negative_depth = 0;
};

// Aggregates classification rows; each head needs an ID and an OOD row.
CensusResult summarize_census(std::vector<CensusRow> rows);

CensusResult head_census(std::span<const CensusSubject> population, std::span<const dyck::ParenSequence> id_dataset,
                         std::span<const dyck::ParenSequence> ood_dataset, double threshold = 0.8);

// run_id,layer,head,dataset_tag,hierarchical,neg_depth,sign_matching,mixed_depth_count,track_fraction
std::string census_csv(const std::vector<CensusRow>& rows);

}  // namespace ambl::analysis
