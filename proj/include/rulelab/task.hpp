#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace rulelab {

enum class TaskId { A, B, C, D };

inline constexpr TaskId kAllTasks[] = {TaskId::A, TaskId::B, TaskId::C, TaskId::D};

std::string task_name(TaskId task);
TaskId parse_task(std::string_view name);  // throws ConfigError

// Fine-rule ratio rho* each task's generator enforces:
//   A  l2*h1 / (l1*h2) = 1   (shadow similar triangles)
//   B  l2*h2 / (l1*h1) = 1   (distance x height constant)
//   C  r2 / r1         = sqrt(2)
//   D  l2 / l1         = 1.5
double target_ratio(TaskId task);

// Element names in canonical order. The first element is always yellow.
const std::vector<std::string>& element_names(TaskId task);

// Default paper sample count for a training set.
int default_sample_count(TaskId task);

}  // namespace rulelab
