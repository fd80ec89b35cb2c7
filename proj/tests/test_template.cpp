#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace exrank;

namespace {

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

const std::vector<Candidate> kExamples = {{0, "The food was good.", "food: positive"},
                                          {1, "Best. Sushi. Ever.", "Sushi: positive"},
                                          {2, "Unbelievable.", "noaspectterm: none"}};

}  // namespace

TEST(Render, ZeroExamples) {
  auto out = render("D", {}, "t", 0);
  EXPECT_NE(out.find('D'), std::string::npos);
  EXPECT_NE(out.find('t'), std::string::npos);
  EXPECT_EQ(out.find("Example"), std::string::npos);
  EXPECT_EQ(out, "Definition: D Now complete the following- Input: t Output:");
}

TEST(Render, OneExampleSlots) {
  auto out = render("D", kExamples, "Serves really good sushi.", 1);
  EXPECT_EQ(out,
            "Definition: D Example 1- Input: The food was good. Output: food: positive "
            "Now complete the following- Input: Serves really good sushi. Output:");
}

TEST(Render, OrderAndStructure) {
  const std::string def = "Extract things.";
  auto out = render(def, kExamples, "q", 3);
  EXPECT_EQ(count(out, def), 1u);
  auto d = out.find(def), e1 = out.find("Example 1-"), e2 = out.find("Example 2-"), e3 = out.find("Example 3-"),
       q = out.find("Now complete the following- Input: q Output:");
  EXPECT_LT(d, e1);
  EXPECT_LT(e1, e2);
  EXPECT_LT(e2, e3);
  EXPECT_LT(e3, q);
  EXPECT_EQ(q + std::string("Now complete the following- Input: q Output:").size(), out.size());
}

TEST(Render, LongerWithEveryExample) {
  std::size_t prev = 0;
  for (std::size_t k = 0; k <= kExamples.size(); ++k) {
    auto len = render("D", kExamples, "q", k).size();
    EXPECT_GT(len, prev);
    prev = len;
  }
}

TEST(Render, RejectsTooFewExamples) { EXPECT_THROW(render("D", kExamples, "q", 4), std::invalid_argument); }

TEST(Render, BracesInValuesStayLiteral) {
  std::vector<Candidate> ex = {{0, "a {output} b", "{input}"}};
  auto out = render("{definition}", ex, "{index}", 1);
  EXPECT_EQ(out, "Definition: {definition} Example 1- Input: a {output} b Output: {input} "
                 "Now complete the following- Input: {index} Output:");
}

TEST(Render, AtscInput) {
  EXPECT_EQ(atsc_input("Serves really good sushi.", "sushi"), "Serves really good sushi. The aspect is sushi.");
  EXPECT_EQ(atsc_input("", "a"), " The aspect is a.");
}

TEST(Render, CandidateAndQueryText) {
  EXPECT_EQ(candidate_text({0, "a", "b"}), "Input: a Output: b");
  EXPECT_EQ(query_text("a"), "Input: a");
  EXPECT_EQ(candidate_text({3, "x", "y"}), candidate_text({9, "x", "y"}));
}

TEST(Templates, AssetsMatchBuiltins) {
  for (Task task : {Task::ate, Task::atsc, Task::aspe})
    EXPECT_EQ(load_template(EXRANK_TEMPLATE_DIR, task), default_template(task)) << to_string(task);
}

TEST(Templates, OverrideDirectory) {
  auto dir = std::filesystem::temp_directory_path() / "exrank_tmpl_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(template_file(dir, Task::ate));
    out << "# custom\nversion = 1\ndefinition = List the aspects.\n";
  }
  auto t = load_template(dir, Task::ate);
  EXPECT_EQ(t.definition, "List the aspects.");
  EXPECT_EQ(t.example_format, default_template(Task::ate).example_format);
  EXPECT_THROW(load_template(dir, Task::aspe), std::runtime_error);
  std::istringstream bad("colour = blue\n");
  EXPECT_THROW(parse_template(bad, Task::ate), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(Templates, CandidatesCarryTaskOutputs) {
  auto [train, test] = generate_synthetic(30, 5, 4);
  auto atsc = with_task(train, Task::atsc);
  for (const auto& c : make_candidates(atsc)) {
    const auto& s = atsc[static_cast<std::size_t>(c.id)];
    EXPECT_EQ(c.input, atsc_input(s.text, *s.aspect));
    EXPECT_EQ(c.output, serialize_label(s, Task::atsc));
  }
}
