#pragma once

#include <bit>
#include <functional>
#include <optional>
#include <vector>

namespace hkv {

/// k-way merge with a tournament (loser) tree: next() costs O(log k)
/// comparisons instead of O(k). Sources are pull functions returning
/// nullopt when exhausted; ties go to the lower source index, so merging
/// pre-sorted runs is stable.
///
/// Layout: leaves are padded to m = bit_ceil(k); tree_[1..m-1] hold the
/// losers of each internal match, tree_[0] the overall winner. Padded and
/// exhausted leaves lose to everything.
template <typename T, typename Less = std::less<T>>
class LoserTree {
public:
    using Source = std::function<std::optional<T>()>;

    explicit LoserTree(std::vector<Source> sources, Less less = {})
        : srcs_(std::move(sources)), less_(less) {
        size_t k = srcs_.size();
        m_ = k ? std::bit_ceil(k) : 1;
        cur_.resize(k);
        for (size_t i = 0; i < k; i++) cur_[i] = srcs_[i]();
        tree_.assign(m_, -1);
        tree_[0] = m_ > 1 ? build(1) : (k ? 0 : -1);
    }

    /// Pops the global minimum, refilling from its source. nullopt when all
    /// sources are dry.
    std::optional<T> next() {
        int w = tree_[0];
        if (w < 0 || !cur_[w]) return std::nullopt;
        std::optional<T> out = std::move(cur_[w]);
        cur_[w] = srcs_[w]();
        replay(w);
        return out;
    }

    /// Comparisons performed so far; callers use it to charge merge CPU.
    uint64_t steps() const { return steps_; }

private:
    // Winner of the subtree rooted at internal node t; stores losers.
    int build(size_t t) {
        if (t >= m_) {
            size_t leaf = t - m_;
            return leaf < srcs_.size() ? int(leaf) : -1;
        }
        int a = build(2 * t);
        int b = build(2 * t + 1);
        steps_++;
        if (beats(b, a)) std::swap(a, b);
        tree_[t] = b;
        return a;
    }

    // Leaf i changed: re-play its matches against the stored losers.
    void replay(int i) {
        for (size_t t = (m_ + size_t(i)) / 2; t >= 1; t /= 2) {
            steps_++;
            if (beats(tree_[t], i)) std::swap(tree_[t], i);
        }
        tree_[0] = i;
    }

    // True when leaf a's current element should be delivered before leaf b's.
    bool beats(int a, int b) {
        if (a < 0 || !cur_[a]) return false;
        if (b < 0 || !cur_[b]) return true;
        if (less_(*cur_[a], *cur_[b])) return true;
        if (less_(*cur_[b], *cur_[a])) return false;
        return a < b;
    }

    std::vector<Source> srcs_;
    Less less_;
    size_t m_ = 1;
    std::vector<std::optional<T>> cur_;
    std::vector<int> tree_;
    uint64_t steps_ = 0;
};

}  // namespace hkv
