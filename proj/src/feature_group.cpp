#include "evoad/feature_group.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "evoad/error.hpp"

namespace evoad {

FeatureGroup::FeatureGroup(std::initializer_list<FeatureIndex> indices)
    : FeatureGroup(std::vector<FeatureIndex>(indices)) {}

FeatureGroup::FeatureGroup(std::vector<FeatureIndex> indices) : indices_(std::move(indices)) {
    std::sort(indices_.begin(), indices_.end());
    indices_.erase(std::unique(indices_.begin(), indices_.end()), indices_.end());
}

FeatureGroup FeatureGroup::all(std::size_t n_features) {
    FeatureGroup g;
    g.indices_.resize(n_features);
    for (std::size_t i = 0; i < n_features; ++i) g.indices_[i] = i;
    return g;
}

bool FeatureGroup::contains(FeatureIndex f) const {
    return std::binary_search(indices_.begin(), indices_.end(), f);
}

bool FeatureGroup::insert(FeatureIndex f) {
    auto it = std::lower_bound(indices_.begin(), indices_.end(), f);
    if (it != indices_.end() && *it == f) return false;
    indices_.insert(it, f);
    return true;
}

bool FeatureGroup::erase(FeatureIndex f) {
    auto it = std::lower_bound(indices_.begin(), indices_.end(), f);
    if (it == indices_.end() || *it != f) return false;
    indices_.erase(it);
    return true;
}

std::string FeatureGroup::to_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < indices_.size(); ++i) os << (i ? ", " : "") << indices_[i];
    os << ']';
    return os.str();
}

std::size_t Partition::non_empty_groups() const {
    return static_cast<std::size_t>(
        std::count_if(groups.begin(), groups.end(), [](const FeatureGroup& g) { return !g.empty(); }));
}

bool Partition::contains(FeatureIndex f) const {
    return std::any_of(groups.begin(), groups.end(), [f](const FeatureGroup& g) { return g.contains(f); });
}

void Partition::validate(std::size_t k, std::size_t n_features) const {
    if (groups.size() != k) {
        throw ValidationError("partition has " + std::to_string(groups.size()) + " groups, expected " +
                              std::to_string(k));
    }
    for (std::size_t i = 0; i < groups.size(); ++i) {
        if (!groups[i].empty() && groups[i].back() >= n_features) {
            throw ValidationError("partition group " + std::to_string(i) + " references feature " +
                                  std::to_string(groups[i].back()) + " but the dataset has " +
                                  std::to_string(n_features) + " features");
        }
    }
}

std::string Partition::to_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < groups.size(); ++i) {
        if (i) s += ", ";
        s += groups[i].to_string();
    }
    return s + "]";
}

namespace {
constexpr const char* kPartitionMagic = "evoad-partition";
constexpr int kPartitionVersion = 1;
}  // namespace

void write_partition(std::ostream& out, const Partition& partition) {
    out << kPartitionMagic << ' ' << kPartitionVersion << '\n';
    out << "k " << partition.k() << '\n';
    for (const auto& g : partition.groups) {
        out << 'g';
        for (FeatureIndex f : g) out << ' ' << f;
        out << '\n';
    }
}

Partition read_partition(std::istream& in) {
    std::string line;
    auto next_line = [&](const char* what) {
        if (!std::getline(in, line)) throw ValidationError(std::string("partition file truncated: missing ") + what);
        if (!line.empty() && line.back() == '\r') line.pop_back();
    };

    next_line("header");
    {
        std::istringstream ls(line);
        std::string magic;
        int version = 0;
        if (!(ls >> magic >> version) || magic != kPartitionMagic) {
            throw ValidationError("not a partition file (bad header '" + line + "')");
        }
        if (version != kPartitionVersion) {
            throw ValidationError("unsupported partition format version " + std::to_string(version));
        }
    }
    next_line("k line");
    std::size_t k = 0;
    {
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag >> k) || tag != "k") throw ValidationError("bad k line '" + line + "'");
    }
    Partition p;
    for (std::size_t i = 0; i < k; ++i) {
        next_line("group line");
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag != "g") throw ValidationError("bad group line '" + line + "'");
        std::vector<FeatureIndex> idx;
        long long f = 0;
        while (ls >> f) {
            if (f < 0) throw ValidationError("negative feature index in '" + line + "'");
            idx.push_back(static_cast<FeatureIndex>(f));
        }
        if (!ls.eof()) throw ValidationError("non-numeric feature index in '" + line + "'");
        p.groups.emplace_back(std::move(idx));
    }
    return p;
}

void save_partition(const std::string& path, const Partition& partition) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write partition file " + path);
    write_partition(out, partition);
}

Partition load_partition(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open partition file " + path);
    return read_partition(in);
}

}  // namespace evoad
