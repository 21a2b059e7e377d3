#pragma once

#include "cubehex/types.hpp"

#include <limits>
#include <vector>

namespace cubehex
{

using Box3 = Eigen::AlignedBox3d;

/// Axis-aligned bounding-volume hierarchy over primitive boxes. Small primitive sets are
/// scanned linearly.
class Bvh
{
public:
    static constexpr size_t kBruteForceBelow = 64;

    void build(std::vector<Box3> boxes);
    /// Updates node boxes for moved primitives without changing the tree shape.
    void refit(std::vector<Box3> boxes);

    size_t size() const { return boxes_.size(); }

    /// Branch-and-bound nearest primitive. `sq_distance(prim)` returns the squared distance
    /// from the query to the primitive. Ties keep the lowest primitive index.
    template <class SqDistance>
    void nearest(const Vec3& p, SqDistance&& sq_distance, double& best, int& best_prim) const
    {
        auto consider = [&](int prim) {
            double d = sq_distance(prim);
            if (d < best || (d == best && prim < best_prim))
            {
                best = d;
                best_prim = prim;
            }
        };
        if (nodes_.empty())
        {
            for (int i = 0; i < static_cast<int>(boxes_.size()); ++i)
                consider(i);
            return;
        }
        int stack[128];
        int top = 0;
        stack[top++] = 0;
        while (top > 0)
        {
            const Node& node = nodes_[static_cast<size_t>(stack[--top])];
            if (node.box.squaredExteriorDistance(p) > best)
                continue;
            if (node.left < 0)
            {
                for (int i = node.begin; i < node.end; ++i)
                    consider(order_[static_cast<size_t>(i)]);
                continue;
            }
            double dl = nodes_[static_cast<size_t>(node.left)].box.squaredExteriorDistance(p);
            double dr = nodes_[static_cast<size_t>(node.right)].box.squaredExteriorDistance(p);
            // Push the farther child first so the nearer one is explored first.
            if (dl <= dr)
            {
                stack[top++] = node.right;
                stack[top++] = node.left;
            }
            else
            {
                stack[top++] = node.left;
                stack[top++] = node.right;
            }
        }
    }

    /// Calls fn(prim) for every primitive whose box contains p (boxes padded by `pad`).
    template <class Fn>
    void visit_containing(const Vec3& p, double pad, Fn&& fn) const
    {
        auto hit = [&](const Box3& b) {
            return (p.array() >= b.min().array() - pad).all() && (p.array() <= b.max().array() + pad).all();
        };
        if (nodes_.empty())
        {
            for (int i = 0; i < static_cast<int>(boxes_.size()); ++i)
                if (hit(boxes_[static_cast<size_t>(i)]))
                    fn(i);
            return;
        }
        int stack[128];
        int top = 0;
        stack[top++] = 0;
        while (top > 0)
        {
            const Node& node = nodes_[static_cast<size_t>(stack[--top])];
            if (!hit(node.box))
                continue;
            if (node.left < 0)
            {
                for (int i = node.begin; i < node.end; ++i)
                {
                    int prim = order_[static_cast<size_t>(i)];
                    if (hit(boxes_[static_cast<size_t>(prim)]))
                        fn(prim);
                }
                continue;
            }
            stack[top++] = node.left;
            stack[top++] = node.right;
        }
    }

private:
    struct Node
    {
        Box3 box;
        int left = -1;
        int right = -1;
        int begin = 0;
        int end = 0;
    };

    int build_node(int begin, int end, std::vector<Vec3>& centers);

    std::vector<Box3> boxes_;
    std::vector<Node> nodes_;
    std::vector<int> order_;
};

} // namespace cubehex
