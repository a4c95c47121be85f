#include "ambl/attention_analysis.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace ambl::analysis {

bool is_mixed_depth(const dyck::ParenSequence& seq) {
  const auto d = dyck::depth_profile(seq);
  const bool neg = std::any_of(d.begin(), d.end(), [](int x) { return x < 0; });
  const bool nonneg = std::any_of(d.begin(), d.end(), [](int x) { return x >= 0; });
  return neg && nonneg;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::FavorsNegative: return "FavorsNegative";
    case Verdict::FavorsNonNegative: return "FavorsNonNegative";
    case Verdict::Neither: break;
  }
  return "Neither";
}

std::string to_string(DatasetTag t) { return t == DatasetTag::ID ? "ID" : "OOD"; }

DepthPreference depth_preference(std::span<const double> row, const dyck::DepthProfile& profile) {
  if (row.size() != profile.size()) {
    throw std::invalid_argument("depth_preference: row has " + std::to_string(row.size()) + " entries, profile has " +
                                std::to_string(profile.size()));
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  double min_neg = inf, max_neg = -inf, min_non = inf, max_non = -inf;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (profile[j] < 0) {
      min_neg = std::min(min_neg, row[j]);
      max_neg = std::max(max_neg, row[j]);
    } else {
      min_non = std::min(min_non, row[j]);
      max_non = std::max(max_non, row[j]);
    }
  }
  if (min_neg == inf || min_non == inf) throw std::invalid_argument("depth_preference: input is not mixed-depth");
  DepthPreference out;
  if (min_neg > max_non && min_neg > 0.0) {
    out.verdict = Verdict::FavorsNegative;
    out.witness = 0.5 * (min_neg + std::max(max_non, 0.0));
  } else if (min_non > max_neg && min_non > 0.0) {
    out.verdict = Verdict::FavorsNonNegative;
    out.witness = 0.5 * (min_non + std::max(max_neg, 0.0));
  }
  return out;
}

DepthPreference depth_preference(const model::EosAttentionRow& row, const dyck::DepthProfile& profile) {
  return depth_preference(std::span<const double>(row.values), profile);
}

double HeadClassification::track_fraction() const {
  if (mixed_depth_count == 0) return 0.0;
  return static_cast<double>(favors_negative + favors_non_negative) / static_cast<double>(mixed_depth_count);
}

void apply_threshold(HeadClassification& c, double threshold) {
  const double m = c.mixed_depth_count;
  c.is_hierarchical = c.track_fraction() >= threshold;
  c.is_negative_depth_detector = c.is_hierarchical && c.favors_negative / m >= threshold;
  c.is_sign_matching = c.is_hierarchical && c.sign_matched / m >= threshold;
}

CaptureFn model_capture(const model::ModelRecord& model) {
  return [&model](const dyck::ParenSequence& seq) { return model::forward_with_capture(model, dyck::tokenize(seq)).capture; };
}

std::vector<HeadClassification> classify_heads(int depth, int heads, const CaptureFn& capture,
                                               std::span<const dyck::ParenSequence> dataset, DatasetTag tag,
                                               double threshold) {
  if (dataset.empty()) throw std::invalid_argument("classify_heads: empty dataset");
  std::vector<const dyck::ParenSequence*> mixed;
  for (const auto& s : dataset) {
    if (!s.empty() && is_mixed_depth(s)) mixed.push_back(&s);
  }
  if (mixed.empty()) throw std::invalid_argument("classify_heads: dataset has no mixed-depth inputs");

  const int nh = depth * heads;
  const long count = static_cast<long>(mixed.size());
  // verdicts[i * nh + h]; 0 neither, 1 negative, 2 non-negative; sign[i] from d(n)
  std::vector<char> verdicts(static_cast<std::size_t>(count) * nh, 0);
  std::vector<char> final_negative(count, 0);
#pragma omp parallel for schedule(dynamic, 8)
  for (long i = 0; i < count; ++i) {
    const auto& seq = *mixed[i];
    const auto profile = dyck::depth_profile(seq);
    final_negative[i] = profile.back() < 0;
    const auto cap = capture(seq);
    for (int l = 0; l < depth; ++l) {
      for (int h = 0; h < heads; ++h) {
        const auto pref = depth_preference(model::eos_attention_row(cap, l, h, seq.size()), profile);
        verdicts[static_cast<std::size_t>(i) * nh + l * heads + h] =
            pref.verdict == Verdict::FavorsNegative ? 1 : pref.verdict == Verdict::FavorsNonNegative ? 2 : 0;
      }
    }
  }

  std::vector<HeadClassification> out;
  for (int l = 0; l < depth; ++l) {
    for (int h = 0; h < heads; ++h) {
      HeadClassification c;
      c.layer = l;
      c.head = h;
      c.tag = tag;
      c.mixed_depth_count = static_cast<int>(count);
      for (long i = 0; i < count; ++i) {
        const char v = verdicts[static_cast<std::size_t>(i) * nh + l * heads + h];
        c.favors_negative += v == 1;
        c.favors_non_negative += v == 2;
        c.sign_matched += final_negative[i] ? v == 1 : v == 2;
      }
      apply_threshold(c, threshold);
      out.push_back(c);
    }
  }
  return out;
}

HeadClassification classify_head(const model::ModelRecord& model, int layer, int head,
                                 std::span<const dyck::ParenSequence> dataset, DatasetTag tag, double threshold) {
  if (layer < 0 || layer >= model.hp.depth || head < 0 || head >= model.hp.heads) {
    throw std::out_of_range("classify_head: head outside model dimensions");
  }
  const auto all = classify_heads(model.hp.depth, model.hp.heads, model_capture(model), dataset, tag, threshold);
  return all[static_cast<std::size_t>(layer) * model.hp.heads + head];
}

std::string to_string(HeadType t) {
  switch (t) {
    case HeadType::SignMatching: return "sign_matching";
    case HeadType::NegativeDepth: return "negative_depth";
    case HeadType::Both: return "both";
    case HeadType::OtherHierarchical: return "other_hierarchical";
    case HeadType::NotHierarchical: break;
  }
  return "not_hierarchical";
}

HeadType head_type(const HeadClassification& c) {
  if (!c.is_hierarchical) return HeadType::NotHierarchical;
  if (c.is_sign_matching && c.is_negative_depth_detector) return HeadType::Both;
  if (c.is_sign_matching) return HeadType::SignMatching;
  if (c.is_negative_depth_detector) return HeadType::NegativeDepth;
  return HeadType::OtherHierarchical;
}

CensusResult summarize_census(std::vector<CensusRow> rows) {
  CensusResult r;
  // Pair rows per (run, layer, head), keeping first-seen model order.
  std::vector<std::string> order;
  std::map<std::string, std::map<std::pair<int, int>, std::pair<const HeadClassification*, const HeadClassification*>>> heads;
  for (const auto& row : rows) {
    if (!heads.count(row.run_id)) order.push_back(row.run_id);
    auto& slot = heads[row.run_id][{row.head.layer, row.head.head}];
    (row.head.tag == DatasetTag::ID ? slot.first : slot.second) = &row.head;
  }
  int with_hier = 0, with_sign = 0, with_neg = 0, with_both = 0;
  for (const auto& run_id : order) {
    ModelHeadSummary s;
    s.run_id = run_id;
    for (const auto& [key, pair] : heads[run_id]) {
      const auto* id = pair.first;
      const auto* ood = pair.second;
      if (!id || !ood) throw std::invalid_argument("summarize_census: head without both ID and OOD rows in " + run_id);
      s.depth = std::max(s.depth, key.first + 1);
      s.id_hierarchical |= id->is_hierarchical;
      s.id_sign_matching |= id->is_sign_matching;
      s.id_negative_depth |= id->is_negative_depth_detector;
      s.ood_hierarchical |= ood->is_hierarchical;
      if (key.first == 0) s.hierarchical_heads_first_layer += id->is_hierarchical + ood->is_hierarchical;

      ++r.cross_tab[head_type(*id)][head_type(*ood)];
      if (id->is_hierarchical) {
        ++r.id_hierarchical_heads;
        r.id_hierarchical_not_ood_hierarchical += !ood->is_hierarchical;
      }
      if (id->is_sign_matching) {
        ++r.id_sign_matching_heads;
        r.id_sign_matching_to_ood_negative_depth += ood->is_negative_depth_detector;
      }
    }
    with_hier += s.id_hierarchical;
    with_sign += s.id_sign_matching;
    with_neg += s.id_negative_depth;
    with_both += s.id_sign_matching && s.id_negative_depth;
    r.models.push_back(s);
  }
  if (with_hier > 0) {
    r.frac_models_sign_matching = static_cast<double>(with_sign) / with_hier;
    r.frac_models_negative_depth = static_cast<double>(with_neg) / with_hier;
    r.frac_models_both = static_cast<double>(with_both) / with_hier;
  }
  r.rows = std::move(rows);
  return r;
}

CensusResult head_census(std::span<const CensusSubject> population, std::span<const dyck::ParenSequence> id_dataset,
                         std::span<const dyck::ParenSequence> ood_dataset, double threshold) {
  std::vector<CensusRow> rows;
  for (const auto& subject : population) {
    const auto id = classify_heads(subject.depth, subject.heads, subject.capture, id_dataset, DatasetTag::ID, threshold);
    const auto ood = classify_heads(subject.depth, subject.heads, subject.capture, ood_dataset, DatasetTag::OOD, threshold);
    for (std::size_t k = 0; k < id.size(); ++k) {
      rows.push_back({subject.run_id, id[k]});
      rows.push_back({subject.run_id, ood[k]});
    }
  }
  return summarize_census(std::move(rows));
}

std::string census_csv(const std::vector<CensusRow>& rows) {
  std::string out = "run_id,layer,head,dataset_tag,hierarchical,neg_depth,sign_matching,mixed_depth_count,track_fraction\n";
  for (const auto& row : rows) {
    const auto& c = row.head;
    out += fmt::format("{},{},{},{},{:d},{:d},{:d},{},{}\n", row.run_id, c.layer, c.head, to_string(c.tag),
                       static_cast<int>(c.is_hierarchical), static_cast<int>(c.is_negative_depth_detector),
                       static_cast<int>(c.is_sign_matching), c.mixed_depth_count, c.track_fraction());
  }
  return out;
}

}  // namespace ambl::analysis
