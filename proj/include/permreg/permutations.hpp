#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "permreg/errors.hpp"
#include "permreg/numerics.hpp"
#include "permreg/rng.hpp"

namespace permreg {

// Permutations of {0, ..., n-1} stored as the sorted list of moved pairs
// (i, pi(i)) with pi(i) != i.  The representation is cheap for the k-sparse
// permutations this library works with: storage is O(d) where d is the
// number of displaced indices, regardless of n.
//
// Convention: the permutation matrix P associated with pi acts on vectors as
// (P v)[pi(i)] = v[i], equivalently (P v)[i] = v[pi^{-1}(i)], and P X moves
// row i of X to row pi(i).
class SparsePermutation {
 public:
  SparsePermutation() : n_(0) {}

  static SparsePermutation identity(int n) {
    if (n < 1) throw DomainError("SparsePermutation: n must be positive");
    SparsePermutation p;
    p.n_ = n;
    return p;
  }

  // Builds from a list of (index, image) pairs; every index not listed is a
  // fixed point.  The list must describe a bijection with no fixed points
  // among the listed indices.
  static SparsePermutation from_moved(int n, std::vector<std::pair<int, int>> moved) {
    if (n < 1) throw DomainError("SparsePermutation: n must be positive");
    std::sort(moved.begin(), moved.end());
    std::vector<int> sources, images;
    sources.reserve(moved.size());
    images.reserve(moved.size());
    for (const auto& [i, j] : moved) {
      if (i < 0 || i >= n || j < 0 || j >= n)
        throw InvalidPermutation("from_moved: index out of range");
      if (i == j) throw InvalidPermutation("from_moved: fixed point listed as moved");
      sources.push_back(i);
      images.push_back(j);
    }
    for (std::size_t t = 1; t < sources.size(); ++t)
      if (sources[t] == sources[t - 1])
        throw InvalidPermutation("from_moved: duplicate source index");
    std::vector<int> sorted_images = images;
    std::sort(sorted_images.begin(), sorted_images.end());
    if (sorted_images != sources)
      throw InvalidPermutation("from_moved: images do not permute the moved set");
    SparsePermutation p;
    p.n_ = n;
    p.moved_ = std::move(moved);
    return p;
  }

  // Builds from a dense image array: image[i] = pi(i).
  static SparsePermutation from_image(const std::vector<int>& image) {
    const int n = static_cast<int>(image.size());
    std::vector<std::pair<int, int>> moved;
    for (int i = 0; i < n; ++i)
      if (image[i] != i) moved.emplace_back(i, image[i]);
    return from_moved(n, std::move(moved));
  }

  static SparsePermutation transposition(int n, int i, int j) {
    if (i == j) throw InvalidPermutation("transposition: indices must differ");
    return from_moved(n, {{i, j}, {j, i}});
  }

  int n() const { return n_; }
  const std::vector<std::pair<int, int>>& moved() const { return moved_; }
  bool is_identity() const { return moved_.empty(); }

  // Number of displaced indices, d(P, I).
  int hamming_distance() const { return static_cast<int>(moved_.size()); }

  int image(int i) const {
    if (i < 0 || i >= n_) throw DomainError("image: index out of range");
    auto it = std::lower_bound(moved_.begin(), moved_.end(), std::make_pair(i, -1));
    if (it != moved_.end() && it->first == i) return it->second;
    return i;
  }

  SparsePermutation inverse() const {
    std::vector<std::pair<int, int>> inv;
    inv.reserve(moved_.size());
    for (const auto& [i, j] : moved_) inv.emplace_back(j, i);
    return from_moved(n_, std::move(inv));
  }

  // Left-to-right composition: (*this).compose(rhs) maps i to this(rhs(i)).
  SparsePermutation compose(const SparsePermutation& rhs) const {
    if (n_ != rhs.n_) throw LengthMismatch("compose: mismatched sizes");
    std::vector<int> indices;
    indices.reserve(moved_.size() + rhs.moved_.size());
    for (const auto& [i, j] : moved_) indices.push_back(i);
    for (const auto& [i, j] : rhs.moved_) indices.push_back(i);
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    std::vector<std::pair<int, int>> moved;
    for (int i : indices) {
      const int j = image(rhs.image(i));
      if (j != i) moved.emplace_back(i, j);
    }
    return from_moved(n_, std::move(moved));
  }

  Vector apply(const Vector& v) const {
    if (v.size() != n_) throw LengthMismatch("apply: vector length does not match n");
    Vector out = v;
    for (const auto& [i, j] : moved_) out[j] = v[i];
    return out;
  }

  Matrix permute_rows(const Matrix& x) const {
    if (x.rows() != n_) throw LengthMismatch("permute_rows: row count does not match n");
    Matrix out = x;
    for (const auto& [i, j] : moved_) out.row(j) = x.row(i);
    return out;
  }

  bool operator==(const SparsePermutation&) const = default;

  // Lexicographic on (n, moved list); gives a deterministic total order for
  // containers and for candidate-set deduplication.
  bool operator<(const SparsePermutation& rhs) const {
    if (n_ != rhs.n_) return n_ < rhs.n_;
    return moved_ < rhs.moved_;
  }

 private:
  int n_;
  std::vector<std::pair<int, int>> moved_;
};

// Hamming distance between two permutations: the number of indices where
// their images differ.  hamming_distance(p, identity) == p.hamming_distance().
inline int hamming_distance(const SparsePermutation& p, const SparsePermutation& q) {
  if (p.n() != q.n()) throw LengthMismatch("hamming_distance: mismatched sizes");
  std::vector<int> indices;
  indices.reserve(p.moved().size() + q.moved().size());
  for (const auto& [i, j] : p.moved()) indices.push_back(i);
  for (const auto& [i, j] : q.moved()) indices.push_back(i);
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  int d = 0;
  for (int i : indices)
    if (p.image(i) != q.image(i)) ++d;
  return d;
}

// ----------------------------------------------------------------------------
// The class P_{n,k} of k-sparse permutations
// ----------------------------------------------------------------------------

struct PermutationClass {
  int n;
  int k;
  PermutationClass(int n_, int k_) : n(n_), k(k_) {
    if (n < 1) throw DomainError("PermutationClass: n must be positive");
    if (k < 0 || k > n) throw DomainError("PermutationClass: k must lie in [0, n]");
  }
};

using BigCount = unsigned __int128;

namespace detail {

inline BigCount checked_add(BigCount a, BigCount b) {
  const BigCount s = a + b;
  if (s < a) throw Overflow("count_class: 128-bit overflow");
  return s;
}

inline BigCount checked_mul(BigCount a, BigCount b) {
  if (a == 0 || b == 0) return 0;
  if (a > static_cast<BigCount>(-1) / b) throw Overflow("count_class: 128-bit overflow");
  return a * b;
}

// Binomial coefficient with overflow checking.
inline BigCount binomial(int n, int m) {
  if (m < 0 || m > n) return 0;
  m = std::min(m, n - m);
  BigCount r = 1;
  for (int t = 1; t <= m; ++t) {
    r = checked_mul(r, static_cast<BigCount>(n - m + t));
    r /= static_cast<BigCount>(t);
  }
  return r;
}

// Derangement numbers D_0, ..., D_m via D_t = (t-1)(D_{t-1} + D_{t-2}).
inline std::vector<BigCount> derangement_table(int m) {
  std::vector<BigCount> d(static_cast<std::size_t>(m) + 1);
  d[0] = 1;
  if (m >= 1) d[1] = 0;
  for (int t = 2; t <= m; ++t)
    d[t] = checked_mul(static_cast<BigCount>(t - 1), checked_add(d[t - 1], d[t - 2]));
  return d;
}

}  // namespace detail

inline std::string to_string(BigCount v) {
  if (v == 0) return "0";
  std::string s;
  while (v > 0) {
    s.push_back(static_cast<char>('0' + static_cast<int>(v % 10)));
    v /= 10;
  }
  std::reverse(s.begin(), s.end());
  return s;
}

// |P_{n,k}| = sum over the number of fixed points: choosing which n-m rows
// stay put and deranging the remaining m, i.e. sum_{m=0}^{k} C(n,m) D_m.
inline BigCount count_class(const PermutationClass& cls) {
  const auto d = detail::derangement_table(cls.k);
  BigCount total = 0;
  for (int m = 0; m <= cls.k; ++m)
    total = detail::checked_add(total, detail::checked_mul(detail::binomial(cls.n, m), d[m]));
  return total;
}

namespace detail {

template <typename Fn>
void for_each_combination(int n, int d, Fn&& fn) {
  std::vector<int> c(d);
  std::iota(c.begin(), c.end(), 0);
  for (;;) {
    fn(c);
    int t = d - 1;
    while (t >= 0 && c[t] == n - d + t) --t;
    if (t < 0) break;
    ++c[t];
    for (int s = t + 1; s < d; ++s) c[s] = c[s - 1] + 1;
  }
}

template <typename Fn>
void derangements_rec(const std::vector<int>& subset, std::vector<int>& image,
                      std::vector<bool>& used, std::size_t t, Fn&& fn) {
  if (t == subset.size()) {
    fn(image);
    return;
  }
  for (std::size_t s = 0; s < subset.size(); ++s) {
    if (used[s] || subset[s] == subset[t]) continue;
    used[s] = true;
    image[t] = subset[s];
    derangements_rec(subset, image, used, t + 1, fn);
    used[s] = false;
  }
}

}  // namespace detail

constexpr BigCount kEnumerationGuard = 10'000'000;

// Visits every element of P_{n,k} in a fixed deterministic order: identity
// first, then increasing displacement d, ties within each d broken
// lexicographically on the sorted moved-pair list.  This order is what makes
// brute-force argmin tie-breaking reproducible.
template <typename Visitor>
void for_each_in_class(const PermutationClass& cls, Visitor&& visit) {
  if (count_class(cls) > kEnumerationGuard)
    throw ClassTooLarge("for_each_in_class: class exceeds the enumeration guard");
  visit(SparsePermutation::identity(cls.n));
  for (int d = 2; d <= cls.k; ++d) {
    std::vector<std::vector<std::pair<int, int>>> block;
    detail::for_each_combination(cls.n, d, [&](const std::vector<int>& subset) {
      std::vector<int> image(subset.size());
      std::vector<bool> used(subset.size(), false);
      detail::derangements_rec(subset, image, used, 0, [&](const std::vector<int>& img) {
        std::vector<std::pair<int, int>> pairs(subset.size());
        for (std::size_t t = 0; t < subset.size(); ++t) pairs[t] = {subset[t], img[t]};
        block.push_back(std::move(pairs));
      });
    });
    std::sort(block.begin(), block.end());
    for (auto& pairs : block) visit(SparsePermutation::from_moved(cls.n, std::move(pairs)));
  }
}

inline std::vector<SparsePermutation> enumerate_class(const PermutationClass& cls) {
  const BigCount total = count_class(cls);
  if (total > kEnumerationGuard)
    throw ClassTooLarge("enumerate_class: class exceeds the enumeration guard");
  std::vector<SparsePermutation> out;
  out.reserve(static_cast<std::size_t>(total));
  for_each_in_class(cls, [&](const SparsePermutation& p) { out.push_back(p); });
  return out;
}

// Uniform draw from the permutations at exact displacement d within P_{n,k}.
// d == 0 yields the identity; d == 1 is impossible (a single index cannot
// move alone) and is rejected, as is d > k.
inline SparsePermutation random_k_sparse(RngStream rng, const PermutationClass& cls,
                                         int exact_d) {
  if (exact_d == 0) return SparsePermutation::identity(cls.n);
  if (exact_d < 0 || exact_d == 1 || exact_d > cls.k)
    throw InvalidDistance("random_k_sparse: displacement must be 0 or in {2, ..., k}");

  // Uniform d-subset via a partial Fisher-Yates pass.
  std::vector<int> pool(cls.n);
  std::iota(pool.begin(), pool.end(), 0);
  for (int t = 0; t < exact_d; ++t) {
    const int j = t + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cls.n - t)));
    std::swap(pool[t], pool[j]);
  }
  std::vector<int> subset(pool.begin(), pool.begin() + exact_d);
  std::sort(subset.begin(), subset.end());

  // Uniform derangement of the subset by rejection: shuffle until no index
  // maps to itself.  Acceptance probability tends to 1/e, so this terminates
  // quickly; the guard only trips on a broken generator.
  std::vector<int> image = subset;
  for (int attempt = 0; attempt < 100000; ++attempt) {
    for (int t = exact_d - 1; t > 0; --t) {
      const int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(t + 1)));
      std::swap(image[t], image[j]);
    }
    bool deranged = true;
    for (int t = 0; t < exact_d; ++t)
      if (image[t] == subset[t]) {
        deranged = false;
        break;
      }
    if (deranged) {
      std::vector<std::pair<int, int>> pairs(subset.size());
      for (int t = 0; t < exact_d; ++t) pairs[t] = {subset[t], image[t]};
      return SparsePermutation::from_moved(cls.n, std::move(pairs));
    }
  }
  throw Error("random_k_sparse: rejection sampling failed to terminate");
}

}  // namespace permreg
