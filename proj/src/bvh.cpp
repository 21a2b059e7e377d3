#include "cubehex/bvh.hpp"

#include <algorithm>
#include <numeric>

namespace cubehex
{

namespace
{
constexpr int kLeafSize = 4;
}

void Bvh::build(std::vector<Box3> boxes)
{
    boxes_ = std::move(boxes);
    nodes_.clear();
    order_.resize(boxes_.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (boxes_.size() < kBruteForceBelow)
        return;
    std::vector<Vec3> centers(boxes_.size());
    for (size_t i = 0; i < boxes_.size(); ++i)
        centers[i] = boxes_[i].center();
    nodes_.reserve(2 * boxes_.size() / kLeafSize + 1);
    build_node(0, static_cast<int>(boxes_.size()), centers);
}

int Bvh::build_node(int begin, int end, std::vector<Vec3>& centers)
{
    int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Box3 box;
    Box3 center_box;
    for (int i = begin; i < end; ++i)
    {
        int prim = order_[static_cast<size_t>(i)];
        box.extend(boxes_[static_cast<size_t>(prim)]);
        center_box.extend(centers[static_cast<size_t>(prim)]);
    }
    nodes_[static_cast<size_t>(id)].box = box;
    nodes_[static_cast<size_t>(id)].begin = begin;
    nodes_[static_cast<size_t>(id)].end = end;
    if (end - begin <= kLeafSize)
        return id;

    Eigen::Index axis;
    center_box.sizes().maxCoeff(&axis);
    int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
        double ca = centers[static_cast<size_t>(a)][axis], cb = centers[static_cast<size_t>(b)][axis];
        return ca < cb || (ca == cb && a < b);
    });
    int left = build_node(begin, mid, centers);
    int right = build_node(mid, end, centers);
    nodes_[static_cast<size_t>(id)].left = left;
    nodes_[static_cast<size_t>(id)].right = right;
    return id;
}

void Bvh::refit(std::vector<Box3> boxes)
{
    boxes_ = std::move(boxes);
    // Children always have larger ids than their parent.
    for (size_t n = nodes_.size(); n-- > 0;)
    {
        Node& node = nodes_[n];
        Box3 box;
        if (node.left < 0)
        {
            for (int i = node.begin; i < node.end; ++i)
                box.extend(boxes_[static_cast<size_t>(order_[static_cast<size_t>(i)])]);
        }
        else
        {
            box.extend(nodes_[static_cast<size_t>(node.left)].box);
            box.extend(nodes_[static_cast<size_t>(node.right)].box);
        }
        node.box = box;
    }
}

} // namespace cubehex
