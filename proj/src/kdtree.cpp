#include "dmd/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace dmd {

namespace {
constexpr int kLeafSize = 8;
}

KdTree::KdTree(const Points& points) : points_(points), order_(points.size())
{
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(2 * points.size() / kLeafSize + 2);
    if (!points_.empty())
        root_ = build(0, static_cast<int>(points_.size()));
}

int KdTree::build(int begin, int end)
{
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeafSize)
        return id;

    // split along the widest extent
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (int i = begin; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (hi[axis] == lo[axis])
        return id; // all coincident

    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) { return points_[a][axis] < points_[b][axis]; });
    const double split = points_[order_[mid]][axis];
    const int left = build(begin, mid);
    const int right = build(mid, end);
    Node& node = nodes_[id];
    node.axis = axis;
    node.split = split;
    node.left = left;
    node.right = right;
    return id;
}

KdTree::Neighbor KdTree::nearest(const Vec3& query) const
{
    Neighbor best;
    best.squared_distance = std::numeric_limits<double>::infinity();
    if (root_ >= 0)
        search(root_, query, best);
    return best;
}

void KdTree::search(int node_id, const Vec3& query, Neighbor& best) const
{
    const Node& node = nodes_[node_id];
    if (node.axis < 0) {
        for (int i = node.begin; i < node.end; ++i) {
            const int idx = order_[i];
            const double d = (points_[idx] - query).squaredNorm();
            if (d < best.squared_distance || (d == best.squared_distance && idx < best.index)) {
                best.squared_distance = d;
                best.index = idx;
            }
        }
        return;
    }
    // left holds coordinates <= split, right holds coordinates >= split
    const double diff = query[node.axis] - node.split;
    const int near_child = diff < 0 ? node.left : node.right;
    const int far_child = diff < 0 ? node.right : node.left;
    search(near_child, query, best);
    // visit on equality so equal-distance points with lower index are still found
    if (diff * diff <= best.squared_distance)
        search(far_child, query, best);
}

} // namespace dmd
