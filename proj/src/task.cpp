#include "rulelab/task.hpp"

#include <cmath>

#include "rulelab/error.hpp"

namespace rulelab {

std::string task_name(TaskId task) {
  switch (task) {
    case TaskId::A: return "A";
    case TaskId::B: return "B";
    case TaskId::C: return "C";
    case TaskId::D: return "D";
  }
  return "?";
}

TaskId parse_task(std::string_view name) {
  if (name == "A" || name == "a") return TaskId::A;
  if (name == "B" || name == "b") return TaskId::B;
  if (name == "C" || name == "c") return TaskId::C;
  if (name == "D" || name == "d") return TaskId::D;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected A, B, C or D)");
}

double target_ratio(TaskId task) {
  switch (task) {
    case TaskId::A: return 1.0;
    case TaskId::B: return 1.0;
    case TaskId::C: return std::sqrt(2.0);
    case TaskId::D: return 1.5;
  }
  return 1.0;
}

const std::vector<std::string>& element_names(TaskId task) {
  static const std::vector<std::string> a{"sun", "pole", "shadow"};
  static const std::vector<std::string> b{"near_rect", "far_rect"};
  static const std::vector<std::string> c{"small_circle", "large_circle"};
  static const std::vector<std::string> d{"small_square", "large_square"};
  switch (task) {
    case TaskId::A: return a;
    case TaskId::B: return b;
    case TaskId::C: return c;
    case TaskId::D: return d;
  }
  return a;
}

int default_sample_count(TaskId task) { return task == TaskId::A ? 4000 : 2000; }

}  // namespace rulelab
