#pragma once

#include <vector>

#include "dmd/types.hpp"

namespace dmd {

/// Static 3-d tree over a point set. Queries are exact: the returned neighbour
/// minimises (p - q).squaredNorm() and ties go to the lowest point index, so
/// results are identical to a brute-force scan.
class KdTree {
public:
    struct Neighbor {
        int index = -1;
        double squared_distance = 0;
    };

    explicit KdTree(const Points& points);

    Neighbor nearest(const Vec3& query) const;

    std::size_t size() const { return points_.size(); }

private:
    struct Node {
        int begin = 0, end = 0; // range into order_ for leaves
        int left = -1, right = -1;
        int axis = -1;
        double split = 0;
    };

    int build(int begin, int end);
    void search(int node, const Vec3& query, Neighbor& best) const;

    Points points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

} // namespace dmd
