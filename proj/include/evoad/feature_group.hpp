#pragma once

#include <cstddef>
#include <initializer_list>
#include <iosfwd>
#include <string>
#include <vector>

namespace evoad {

using FeatureIndex = std::size_t;

// Sorted set of feature indices. Duplicates are collapsed on construction.
class FeatureGroup {
public:
    FeatureGroup() = default;
    FeatureGroup(std::initializer_list<FeatureIndex> indices);
    explicit FeatureGroup(std::vector<FeatureIndex> indices);

    static FeatureGroup all(std::size_t n_features);

    const std::vector<FeatureIndex>& indices() const { return indices_; }
    std::size_t size() const { return indices_.size(); }
    bool empty() const { return indices_.empty(); }
    auto begin() const { return indices_.begin(); }
    auto end() const { return indices_.end(); }
    FeatureIndex operator[](std::size_t i) const { return indices_[i]; }
    FeatureIndex front() const { return indices_.front(); }
    FeatureIndex back() const { return indices_.back(); }

    bool contains(FeatureIndex f) const;
    // Both return whether the set changed.
    bool insert(FeatureIndex f);
    bool erase(FeatureIndex f);

    std::string to_string() const;

    friend bool operator==(const FeatureGroup&, const FeatureGroup&) = default;
    friend auto operator<=>(const FeatureGroup&, const FeatureGroup&) = default;

private:
    std::vector<FeatureIndex> indices_;
};

// One GA individual: exactly k groups, which may overlap or be empty.
struct Partition {
    std::vector<FeatureGroup> groups;

    std::size_t k() const { return groups.size(); }
    std::size_t non_empty_groups() const;
    bool contains(FeatureIndex f) const;
    // Throws ValidationError unless there are exactly k groups with indices < n_features.
    void validate(std::size_t k, std::size_t n_features) const;
    std::string to_string() const;

    friend bool operator==(const Partition&, const Partition&) = default;
};

// Versioned text format:
//
//   evoad-partition 1
//   k <k>
//   g <i> <j> ...        (one line per group, "g" alone for an empty group)
void write_partition(std::ostream& out, const Partition& partition);
Partition read_partition(std::istream& in);
void save_partition(const std::string& path, const Partition& partition);
Partition load_partition(const std::string& path);

}  // namespace evoad
