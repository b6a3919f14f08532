#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "icl_lab/experiments.hpp"

using namespace icl;

namespace {

bool in_chain(const Task& t, int m1) { return t.neg_idx == (t.pos_idx + 1) % m1; }

}  // namespace

TEST(TaskSampling, SmallSetsComeFromTheChain) {
    Rng rng(4);
    for (int size = 1; size <= 6; ++size) {
        const TaskSet ts = sample_task_set(6, size, rng);
        ASSERT_EQ(ts.tasks.size(), static_cast<std::size_t>(size));
        for (const Task& t : ts.tasks) EXPECT_TRUE(in_chain(t, 6));
        EXPECT_EQ(std::set<Task>(ts.tasks.begin(), ts.tasks.end()).size(), ts.tasks.size());
    }
    Rng r6(9);
    EXPECT_EQ(sample_task_set(6, 6, r6).tasks, make_training_tasks(6, 1).tasks);
}

TEST(TaskSampling, LargeSetsContainTheChain) {
    Rng rng(5);
    for (int size : {7, 12, 30}) {
        const TaskSet ts = sample_task_set(6, size, rng);
        ASSERT_EQ(ts.tasks.size(), static_cast<std::size_t>(size));
        EXPECT_EQ(std::count_if(ts.tasks.begin(), ts.tasks.end(), [](const Task& t) { return in_chain(t, 6); }), 6);
        EXPECT_EQ(std::set<Task>(ts.tasks.begin(), ts.tasks.end()).size(), ts.tasks.size());
        EXPECT_TRUE(covers_all(ts, 6));
    }
    EXPECT_THROW(sample_task_set(6, 31, rng), InvalidArgument);
    EXPECT_THROW(sample_task_set(6, 0, rng), InvalidArgument);
}

TEST(TaskSampling, SeededAndVaried) {
    std::set<std::vector<Task>> seen;
    for (std::uint64_t s = 0; s < 40; ++s) {
        Rng a(s), b(s);
        const auto ta = sample_task_set(6, 3, a).tasks;
        EXPECT_EQ(ta, sample_task_set(6, 3, b).tasks);
        seen.insert(ta);
    }
    EXPECT_GT(seen.size(), 5u);
}

TEST(TaskSampling, Coverage) {
    EXPECT_TRUE(covers_all(make_training_tasks(6, 1), 6));
    TaskSet partial;
    partial.tasks = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}};
    EXPECT_FALSE(covers_all(partial, 6));
    partial.tasks.push_back({5, 0});
    EXPECT_TRUE(covers_all(partial, 6));
    partial.tasks.push_back({0, 2});
    EXPECT_TRUE(covers_all(partial, 6));
    EXPECT_FALSE(check_condition(partial, 6));
}
