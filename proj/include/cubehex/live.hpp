#pragma once

#include <mutex>

namespace cubehex
{

/// Value shared between a running optimizer and the thread that edits it (weight sliders).
template <class T>
class LiveValue
{
public:
    LiveValue() = default;
    explicit LiveValue(T value) : value_(std::move(value)) {}

    T get() const
    {
        std::lock_guard<std::mutex> lock(mutex_);
        return value_;
    }

    void set(T value)
    {
        std::lock_guard<std::mutex> lock(mutex_);
        value_ = std::move(value);
    }

private:
    mutable std::mutex mutex_;
    T value_{};
};

} // namespace cubehex
