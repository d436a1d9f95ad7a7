// Reference peer for the one-request-per-line JSON backend protocol.
// Reads requests on stdin, answers deterministically on stdout.
#include <json.hpp>

#include <iostream>
#include <string>

using nlohmann::json;

namespace {

json handle(const json& req) {
  const std::string op = req.at("op").get<std::string>();
  if (op == "caption") {
    const auto& box = req.at("bbox");
    std::string caption = "proc:" + req.at("context").at("object_category").get<std::string>();
    caption += "@" + std::to_string(box.at(0).get<int>()) + "," +
               std::to_string(box.at(1).get<int>()) + "," + std::to_string(box.at(2).get<int>()) +
               "," + std::to_string(box.at(3).get<int>());
    return json{{"ok", true}, {"result", caption}};
  }
  if (op == "score") return json{{"ok", true}, {"result", 0.9}};
  if (op == "decompose") {
    std::vector<std::string> parts;
    for (const auto& c : req.at("categories"))
      parts.push_back(c.get<std::string>() + "-part");
    return json{{"ok", true}, {"result", parts}};
  }
  if (op == "segment_box") {
    const long w = req.at("image").at("w").get<long>();
    const long h = req.at("image").at("h").get<long>();
    return json{{"ok", true}, {"result", {{"w", w}, {"h", h}, {"counts", {0, w * h}}}}};
  }
  if (op == "segment_parts") {
    const long w = req.at("image").at("w").get<long>();
    const long h = req.at("image").at("h").get<long>();
    json out = json::array();
    long offset = 0;
    for (const auto& tag : req.at("vocabulary")) {
      out.push_back(json{{"tag", tag},
                         {"bbox", {0.0 + offset, 0.0, 2.0 + offset, 2.0}},
                         {"mask", {{"w", w}, {"h", h}, {"counts", {0, w * h}}}}});
      ++offset;
    }
    return json{{"ok", true}, {"result", out}};
  }
  return json{{"ok", false}, {"error", "unknown op '" + op + "'"}};
}

}  // namespace

int main() {
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    json response;
    try {
      response = handle(json::parse(line));
    } catch (const std::exception& e) {
      response = json{{"ok", false}, {"error", e.what()}};
    }
    std::cout << response.dump() << "\n" << std::flush;
  }
  return 0;
}
