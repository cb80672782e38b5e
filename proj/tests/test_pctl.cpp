#include <catch2/catch_amalgamated.hpp>

#include "amarl/pctl.hpp"

using namespace amarl;

namespace {

std::string reprint(const std::string& text) {
  return to_string(*parse_formula(text));
}

}  // namespace

TEST_CASE("formulas round-trip through the printer", "[pctl]") {
  CHECK(reprint("P>=0.9 [ F goal_all ]") == "P>=0.9 [ F goal_all ]");
  CHECK(reprint("P<0.05[F captured_1]") == "P<0.05 [ F captured_1 ]");
  CHECK(reprint("P<=0.5 [ X a ]") == "P<=0.5 [ X a ]");
  CHECK(reprint("P>0 [ a U<=7 b ]") == "P>0 [ a U<=7 b ]");
  CHECK(reprint("P=? [ a U b ]") == "P=? [ a U b ]");
  CHECK(reprint("R>=3.5 [ F end_all ]") == "R>=3.5 [ F end_all ]");
  CHECK(reprint("R=?[C<=40]") == "R=? [ C<=40 ]");
  CHECK(reprint("R=?[I=7]") == "R=? [ I=7 ]");
  CHECK(reprint("!a & b") == "(!a & b)");
  CHECK(reprint("!(a & b)") == "!(a & b)");
  CHECK(reprint("true & !false") == "(true & !false)");
}

TEST_CASE("atoms may embed one equals sign", "[pctl]") {
  const auto f = parse_formula("area_1=HallA & !captured_1");
  REQUIRE(f->kind == FKind::And);
  CHECK(f->lhs->kind == FKind::Atom);
  CHECK(f->lhs->atom == "area_1=HallA");
  CHECK(f->rhs->kind == FKind::Not);
  CHECK(f->rhs->lhs->atom == "captured_1");
}

TEST_CASE("structure of parsed bounds", "[pctl]") {
  const auto f = parse_formula("P>=0.9 [ F goal_all ]");
  REQUIRE(f->kind == FKind::PBound);
  CHECK(f->cmp == Cmp::GE);
  CHECK(f->bound == 0.9);
  CHECK(f->path == PathKind::Until);
  CHECK(f->p1->kind == FKind::True);
  CHECK(f->p2->atom == "goal_all");

  const auto r = parse_formula("R=? [ I=12 ]");
  REQUIRE(r->kind == FKind::RBound);
  CHECK(r->cmp == Cmp::Query);
  CHECK(r->rpath == RPathKind::Instant);
  CHECK(r->step_bound == 12);

  const auto b = parse_formula("P<1 [ (a & b) U<=3 !c ]");
  CHECK(b->path == PathKind::BoundedUntil);
  CHECK(b->step_bound == 3);
  CHECK(b->p1->kind == FKind::And);
}

TEST_CASE("weak fragment excludes step-counting operators", "[pctl]") {
  CHECK(weak(*parse_formula("P>=0.9 [ F goal_all ]")));
  CHECK(weak(*parse_formula("P<0.1 [ !captured_1 U goal_1 ]")));
  CHECK(weak(*parse_formula("R>=2 [ F end_all ]")));
  CHECK(weak(*parse_formula("R=? [ C<=40 ]")));
  CHECK_FALSE(weak(*parse_formula("P>=0.5 [ X a ]")));
  CHECK_FALSE(weak(*parse_formula("P>=0.5 [ a U<=9 b ]")));
  CHECK_FALSE(weak(*parse_formula("P>=0.5 [ F (P>0 [ X a ]) ]")));
}

TEST_CASE("parser reports malformed input", "[pctl]") {
  CHECK_THROWS_AS(parse_formula(""), ParseError);
  CHECK_THROWS_AS(parse_formula("P>= [ F a ]"), ParseError);
  CHECK_THROWS_AS(parse_formula("P>=0.5 F a ]"), ParseError);
  CHECK_THROWS_AS(parse_formula("P>=0.5 [ F a"), ParseError);
  CHECK_THROWS_AS(parse_formula("a &"), ParseError);
  CHECK_THROWS_AS(parse_formula("(a & b"), ParseError);
  CHECK_THROWS_AS(parse_formula("R>=1 [ C<40 ]"), ParseError);
  CHECK_THROWS_AS(parse_formula("P>=0.5 [ a U ]"), ParseError);
  CHECK_THROWS_AS(parse_formula("a b"), ParseError);
  CHECK_THROWS_AS(parse_formula("?"), ParseError);
}
