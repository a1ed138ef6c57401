#ifndef RECLINK_COMPARISON_HPP
#define RECLINK_COMPARISON_HPP

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace reclink {

// How a field participates in pairwise comparison: exact fields produce a
// binary agree/disagree level, string fields produce four ordinal levels
// from the normalized edit distance.
enum class FieldKind { exact, string_ld };

struct FieldSpec {
    std::string name;
    FieldKind kind = FieldKind::exact;

    int levels() const { return kind == FieldKind::string_ld ? 4 : 2; }
};

struct Record {
    std::string id;
    int block = 0;
    std::vector<std::string> fields;
    std::vector<std::uint8_t> missing;  // parallel to fields; empty means none missing

    bool is_missing(std::size_t f) const {
        return f < missing.size() && missing[f] != 0;
    }
};

inline std::size_t levenshtein(const std::string& a, const std::string& b) {
    const std::size_t n = a.size(), m = b.size();
    if (n == 0) return m;
    if (m == 0) return n;
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

// Edit distance scaled by the longer length, 0 for two empty strings.
inline double levenshtein_normalized(const std::string& a, const std::string& b) {
    std::size_t len = std::max(a.size(), b.size());
    if (len == 0) return 0.0;
    return static_cast<double>(levenshtein(a, b)) / static_cast<double>(len);
}

// Ordinal disagreement level from a normalized distance:
// exact match, then breaks at 0.25 and 0.5.
inline int categorize_ld(double d) {
    if (d < 0.0 || d > 1.0) throw std::invalid_argument("categorize_ld: out of range");
    if (d == 0.0) return 0;
    if (d <= 0.25) return 1;
    if (d <= 0.5) return 2;
    return 3;
}

// Record indices grouped by block id, blocks in ascending id order.
inline std::map<int, std::vector<int>> block_partition(const std::vector<Record>& recs) {
    std::map<int, std::vector<int>> out;
    for (std::size_t i = 0; i < recs.size(); ++i)
        out[recs[i].block].push_back(static_cast<int>(i));
    return out;
}

// All within-block pairwise comparison vectors for two files, oriented so
// the first file is the smaller one.
struct ComparisonTable {
    bool swapped = false;  // true when the input files were reoriented
    std::size_t n_a = 0, n_b = 0;
    std::vector<FieldSpec> schema;

    struct Block {
        int id = 0;
        std::vector<int> a_rows;
        std::vector<int> b_rows;
        std::size_t pair_begin = 0, pair_end = 0;
    };
    std::vector<Block> blocks;

    std::vector<std::pair<int, int>> pairs;  // canonical (a_row, b_row)
    std::vector<std::int8_t> gamma;          // pairs x fields, -1 = missing

    std::size_t n_fields() const { return schema.size(); }
    std::size_t n_pairs() const { return pairs.size(); }

    std::int8_t level(std::size_t pair, std::size_t field) const {
        return gamma[pair * schema.size() + field];
    }
};

inline std::int8_t compare_field(const FieldSpec& spec,
                                 const Record& ra, const Record& rb,
                                 std::size_t f) {
    if (ra.is_missing(f) || rb.is_missing(f)) return -1;
    const std::string& va = ra.fields[f];
    const std::string& vb = rb.fields[f];
    if (spec.kind == FieldKind::exact)
        return va == vb ? 0 : 1;
    return static_cast<std::int8_t>(categorize_ld(levenshtein_normalized(va, vb)));
}

inline ComparisonTable build_comparisons(const std::vector<Record>& file_a,
                                         const std::vector<Record>& file_b,
                                         const std::vector<FieldSpec>& schema) {
    for (const auto* file : {&file_a, &file_b})
        for (const Record& r : *file)
            if (r.fields.size() != schema.size())
                throw std::invalid_argument("record fields do not match schema");

    ComparisonTable t;
    t.schema = schema;
    const bool swap_files = file_a.size() > file_b.size();
    const std::vector<Record>& A = swap_files ? file_b : file_a;
    const std::vector<Record>& B = swap_files ? file_a : file_b;
    t.swapped = swap_files;
    t.n_a = A.size();
    t.n_b = B.size();

    auto blocks_a = block_partition(A);
    auto blocks_b = block_partition(B);
    std::vector<int> ids;
    for (const auto& kv : blocks_a) ids.push_back(kv.first);
    for (const auto& kv : blocks_b)
        if (!blocks_a.count(kv.first)) ids.push_back(kv.first);
    std::sort(ids.begin(), ids.end());

    for (int id : ids) {
        ComparisonTable::Block blk;
        blk.id = id;
        if (auto it = blocks_a.find(id); it != blocks_a.end()) blk.a_rows = it->second;
        if (auto it = blocks_b.find(id); it != blocks_b.end()) blk.b_rows = it->second;
        blk.pair_begin = t.pairs.size();
        for (int i : blk.a_rows) {
            for (int j : blk.b_rows) {
                t.pairs.emplace_back(i, j);
                for (std::size_t f = 0; f < schema.size(); ++f)
                    t.gamma.push_back(compare_field(schema[f], A[i], B[j], f));
            }
        }
        blk.pair_end = t.pairs.size();
        t.blocks.push_back(std::move(blk));
    }
    return t;
}

} // namespace reclink

#endif
