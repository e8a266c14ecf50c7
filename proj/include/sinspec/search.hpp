#pragma once

// Spectral library search: an exact-scan cosine index over encoder
// embeddings, the modified-cosine baseline, and macro-averaged accuracy.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sinspec/encoder.hpp"
#include "sinspec/errors.hpp"
#include "sinspec/io.hpp"
#include "sinspec/labels.hpp"
#include "sinspec/parallel.hpp"
#include "sinspec/similarity.hpp"

namespace sinspec {

// ---------------------------------------------------------------------------
// Modified cosine

namespace detail {

struct CandidatePair {
    std::size_t a, b;
    double weight;
};

/// Maximum total weight of a one-to-one matching restricted to `pairs`.
/// Exact by subset DP over the side with fewer involved peaks when that side
/// has at most `exact_limit` peaks; greedy by descending weight otherwise.
inline double max_matching_weight(const std::vector<CandidatePair>& pairs, std::size_t exact_limit = 12) {
    if (pairs.empty()) return 0.0;
    std::map<std::size_t, std::size_t> rows_a, rows_b;
    for (const auto& p : pairs) {
        rows_a.emplace(p.a, rows_a.size());
        rows_b.emplace(p.b, rows_b.size());
    }
    const bool a_small = rows_a.size() <= rows_b.size();
    const auto& small = a_small ? rows_a : rows_b;
    const auto& large = a_small ? rows_b : rows_a;
    if (small.size() <= exact_limit) {
        // adj[col] = (row bit, weight) for every candidate touching that column.
        std::vector<std::vector<std::pair<std::size_t, double>>> adj(large.size());
        for (const auto& p : pairs) {
            const auto r = small.at(a_small ? p.a : p.b), c = large.at(a_small ? p.b : p.a);
            adj[c].push_back({r, p.weight});
        }
        const std::size_t masks = std::size_t{1} << small.size();
        std::vector<double> dp(masks, -1.0), next;
        dp[0] = 0.0;
        for (const auto& col : adj) {
            next = dp;
            for (std::size_t m = 0; m < masks; ++m) {
                if (dp[m] < 0.0) continue;
                for (const auto& [r, w] : col) {
                    const std::size_t bit = std::size_t{1} << r;
                    if (m & bit) continue;
                    next[m | bit] = std::max(next[m | bit], dp[m] + w);
                }
            }
            dp.swap(next);
        }
        return *std::max_element(dp.begin(), dp.end());
    }
    auto sorted = pairs;
    std::sort(sorted.begin(), sorted.end(), [](const CandidatePair& x, const CandidatePair& y) {
        if (x.weight != y.weight) return x.weight > y.weight;
        return x.a != y.a ? x.a < y.a : x.b < y.b;
    });
    std::vector<bool> used_a(rows_a.size(), false), used_b(rows_b.size(), false);
    double total = 0.0;
    for (const auto& p : sorted) {
        const auto ia = rows_a.at(p.a), ib = rows_b.at(p.b);
        if (used_a[ia] || used_b[ib]) continue;
        used_a[ia] = used_b[ib] = true;
        total += p.weight;
    }
    return total;
}

}  // namespace detail

/// Fragment pairs within `tol` either directly or after shifting by the
/// precursor difference; weights sqrt(Ia)*sqrt(Ib).
inline std::vector<detail::CandidatePair> modified_cosine_candidates(const Spectrum& a, const Spectrum& b, double tol) {
    const double shift = a.precursor.mz - b.precursor.mz;
    std::vector<detail::CandidatePair> out;
    for (std::size_t i = 0; i < a.fragments.size(); ++i)
        for (std::size_t j = 0; j < b.fragments.size(); ++j) {
            const double diff = a.fragments[i].mz - b.fragments[j].mz;
            if (std::fabs(diff) <= tol || std::fabs(diff - shift) <= tol)
                out.push_back({i, j, std::sqrt(a.fragments[i].intensity) * std::sqrt(b.fragments[j].intensity)});
        }
    return out;
}

/// Matched sqrt-intensity products over sqrt(sum Ia) * sqrt(sum Ib), in
/// [0, 1]. Invariant to intensity scaling; 0 when either side has no signal.
inline double modified_cosine(const Spectrum& a, const Spectrum& b, double tol = 0.1) {
    if (!(tol > 0.0)) throw ContractError("modified_cosine tolerance must be positive");
    double sa = 0.0, sb = 0.0;
    for (const auto& p : a.fragments) sa += p.intensity;
    for (const auto& p : b.fragments) sb += p.intensity;
    if (!(sa > 0.0 && sb > 0.0)) return 0.0;
    const double score = detail::max_matching_weight(modified_cosine_candidates(a, b, tol)) / (std::sqrt(sa) * std::sqrt(sb));
    return std::min(1.0, score);
}

// ---------------------------------------------------------------------------
// Embedding index

struct SearchHit {
    std::string spectrum_id;
    std::string structure_id;
    double score = 0.0;
};

struct SearchResult {
    std::string query_id;
    std::size_t k = 0;
    std::vector<SearchHit> hits;  // scores non-increasing
};

/// Reference embeddings as unit rows, aligned with spectrum and structure ids.
class EmbeddingIndex {
public:
    EmbeddingIndex() = default;
    explicit EmbeddingIndex(std::size_t dim) : dim_(dim) {}

    void add(std::string spectrum_id, std::string structure_id, const std::vector<double>& embedding) {
        if (embedding.size() != dim_)
            throw ContractError("embedding of width " + std::to_string(embedding.size()) + " for an index of width " +
                                std::to_string(dim_));
        double n = 0.0;
        for (double v : embedding) n += v * v;
        n = std::sqrt(n);
        if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("spectrum " + spectrum_id + " has a degenerate embedding");
        for (double v : embedding) rows_.push_back(v / n);
        ids_.push_back(std::move(spectrum_id));
        structures_.push_back(std::move(structure_id));
    }

    std::size_t size() const noexcept { return ids_.size(); }
    bool empty() const noexcept { return ids_.empty(); }
    std::size_t dim() const noexcept { return dim_; }
    const std::vector<double>& rows() const noexcept { return rows_; }
    const std::string& spectrum_id(std::size_t r) const { return ids_.at(r); }
    const std::string& structure_id(std::size_t r) const { return structures_.at(r); }
    std::span<const double> row(std::size_t r) const { return {rows_.data() + r * dim_, dim_}; }

    /// Exact scan: top-k by cosine, ties broken by ascending spectrum id.
    SearchResult query(const std::string& query_id, const std::vector<double>& embedding, std::size_t k) const {
        if (empty()) throw SearchError("search against an empty index");
        if (embedding.size() != dim_) throw ContractError("query width does not match the index");
        double n = 0.0;
        for (double v : embedding) n += v * v;
        n = std::sqrt(n);
        if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("query " + query_id + " has a degenerate embedding");
        std::vector<std::pair<double, std::size_t>> scored(size());
        for (std::size_t r = 0; r < size(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < dim_; ++c) dot += rows_[r * dim_ + c] * embedding[c];
            scored[r] = {dot / n, r};
        }
        const std::size_t take = std::min(k, size());
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                          [&](const auto& x, const auto& y) {
                              if (x.first != y.first) return x.first > y.first;
                              return ids_[x.second] < ids_[y.second];
                          });
        SearchResult res{query_id, k, {}};
        for (std::size_t i = 0; i < take; ++i) {
            const auto r = scored[i].second;
            res.hits.push_back({ids_[r], structures_[r], scored[i].first});
        }
        return res;
    }

private:
    std::size_t dim_ = 0;
    std::vector<double> rows_;
    std::vector<std::string> ids_, structures_;
};

template <typename T>
EmbeddingIndex build_index(const SpectrumEncoder<T>& model, const std::vector<Spectrum>& references,
                           std::size_t threads = 1) {
    std::vector<const Spectrum*> ptrs;
    for (const auto& s : references) ptrs.push_back(&s);
    const auto emb = infer_embeddings(model, ptrs, threads);
    EmbeddingIndex index(model.config().dim);
    for (std::size_t i = 0; i < references.size(); ++i)
        index.add(references[i].id, references[i].structure_id, emb[i]);
    return index;
}

template <typename T>
std::vector<SearchResult> search(const SpectrumEncoder<T>& model, const std::vector<Spectrum>& queries,
                                 const EmbeddingIndex& index, std::size_t k, std::size_t threads = 1) {
    if (index.empty()) throw SearchError("search against an empty index");
    std::vector<const Spectrum*> ptrs;
    for (const auto& s : queries) ptrs.push_back(&s);
    const auto emb = infer_embeddings(model, ptrs, threads);
    std::vector<SearchResult> out(queries.size());
    parallel_for(queries.size(), threads, [&](std::size_t i) { out[i] = index.query(queries[i].id, emb[i], k); });
    return out;
}

// ---------------------------------------------------------------------------
// Accuracy

/// Top-1 judgement for one query.
struct QueryOutcome {
    std::string query_id;
    std::string query_structure;
    std::string hit_id;
    std::string hit_structure;
    double score = 0.0;
    bool exact = false;
    double tanimoto = 0.0;
    bool approximate = false;
};

struct SetAccuracy {
    std::string set;
    std::optional<double> exact;  // omitted for novel queries
    double approximate = 0.0;
    std::size_t structures = 0;
    std::size_t queries = 0;
};

inline QueryOutcome judge_top_hit(const std::string& query_id, const std::string& query_structure, const SearchHit& hit,
                                  const LabelTable& labels, double threshold) {
    if (!labels.contains(query_structure))
        throw EvaluationError("query " + query_id + " has unresolvable structure '" + query_structure + "'");
    if (!labels.contains(hit.structure_id))
        throw EvaluationError("hit " + hit.spectrum_id + " has unresolvable structure '" + hit.structure_id + "'");
    QueryOutcome o{query_id, query_structure, hit.spectrum_id, hit.structure_id, hit.score, false, 0.0, false};
    o.exact = query_structure == hit.structure_id;
    o.tanimoto = tanimoto(labels.at(query_structure).fingerprint, labels.at(hit.structure_id).fingerprint);
    o.approximate = o.exact || o.tanimoto >= threshold;
    return o;
}

/// Per-structure mean of the per-query indicator, then the mean over
/// structures.
inline SetAccuracy macro_accuracy(const std::string& set, const std::vector<QueryOutcome>& outcomes, bool include_exact) {
    SetAccuracy acc;
    acc.set = set;
    acc.queries = outcomes.size();
    if (outcomes.empty()) throw EvaluationError("no queries in set " + set);
    std::map<std::string, std::array<double, 3>> per;  // exact hits, approximate hits, count
    for (const auto& o : outcomes) {
        auto& s = per[o.query_structure];
        s[0] += o.exact ? 1.0 : 0.0;
        s[1] += o.approximate ? 1.0 : 0.0;
        s[2] += 1.0;
    }
    double ex = 0.0, ap = 0.0;
    for (const auto& [st, s] : per) {
        ex += s[0] / s[2];
        ap += s[1] / s[2];
    }
    acc.structures = per.size();
    const double n = static_cast<double>(per.size());
    if (include_exact) acc.exact = ex / n;
    acc.approximate = ap / n;
    return acc;
}

template <typename T>
SetAccuracy evaluate_search(const SpectrumEncoder<T>& model, const std::string& set, const std::vector<Spectrum>& queries,
                            const EmbeddingIndex& index, const LabelTable& labels, double threshold, bool include_exact,
                            std::size_t threads = 1, std::vector<QueryOutcome>* audit = nullptr) {
    const auto results = search(model, queries, index, 1, threads);
    std::vector<QueryOutcome> outcomes;
    for (std::size_t i = 0; i < queries.size(); ++i)
        outcomes.push_back(judge_top_hit(queries[i].id, queries[i].structure_id, results[i].hits.front(), labels, threshold));
    if (audit) audit->insert(audit->end(), outcomes.begin(), outcomes.end());
    return macro_accuracy(set, outcomes, include_exact);
}

inline std::string accuracy_report(const std::vector<SetAccuracy>& rows) {
    std::string out = "query_set\tmatch\taccuracy\tquery_structures\n";
    for (const auto& r : rows) {
        if (r.exact) out += r.set + "\texact\t" + fixed(*r.exact, 6) + "\t" + std::to_string(r.structures) + "\n";
        out += r.set + "\tapproximate\t" + fixed(r.approximate, 6) + "\t" + std::to_string(r.structures) + "\n";
    }
    return out;
}

inline std::string audit_text(const std::vector<QueryOutcome>& outcomes) {
    std::string out = "query_id\thit_id\tscore\texact\ttanimoto\n";
    for (const auto& o : outcomes)
        out += o.query_id + "\t" + o.hit_id + "\t" + general(o.score, 17) + "\t" + (o.exact ? "1" : "0") + "\t" +
               general(o.tanimoto, 17) + "\n";
    return out;
}

inline std::string search_results_text(const std::vector<SearchResult>& results) {
    std::string out = "query_id\trank\thit_id\thit_structure\tscore\n";
    for (const auto& r : results)
        for (std::size_t i = 0; i < r.hits.size(); ++i)
            out += r.query_id + "\t" + std::to_string(i + 1) + "\t" + r.hits[i].spectrum_id + "\t" + r.hits[i].structure_id +
                   "\t" + general(r.hits[i].score, 17) + "\n";
    return out;
}

}  // namespace sinspec
