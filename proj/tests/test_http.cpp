#include "ctxr/http.hpp"

#include <doctest.h>
#include <httplib.h>

#include <filesystem>

using namespace ctxr;
namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

struct Fixture {
  fs::path dir;
  std::unique_ptr<Runtime> rt;
  std::unique_ptr<HttpServer> server;
  std::unique_ptr<httplib::Client> client;

  explicit Fixture(std::optional<AclTable> acl = std::nullopt) {
    static int n = 0;
    dir = fs::temp_directory_path() /
          ("ctxr-http-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
    fs::remove_all(dir);
    Runtime::Options opts;
    opts.data_dir = dir;
    opts.poll_interval = 5ms;
    opts.acl = std::move(acl);
    rt = std::make_unique<Runtime>(opts);
    server = std::make_unique<HttpServer>(*rt);
    REQUIRE(server->start("127.0.0.1:0"));
    client = std::make_unique<httplib::Client>("127.0.0.1", server->port());
    client->set_read_timeout(10, 0);
  }
  ~Fixture() {
    server.reset();
    rt.reset();
    fs::remove_all(dir);
  }
};

}  // namespace

TEST_CASE("http surface round trip") {
  Fixture fx;
  auto res = fx.client->Post("/apply",
                             "kind: cot.dev/v1/Room\nname: r1\n"
                             "egress:\n  - name: occupancy\n"
                             "---\n"
                             "kind: cot.dev/v1/Room\nname: r2\n"
                             "egress:\n  - name: occupancy\n",
                             "application/yaml");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(parse_lines(res->body).size() == 2);

  res = fx.client->Post("/load?ctx=r1", "{occupancy:0.5}\n{occupancy:1.0}\n",
                        "text/plain");
  REQUIRE(res);
  REQUIRE(res->status == 200);
  CHECK(parse_lines(res->body)[0].find("commit")->as_int() == 0);
  fx.client->Post("/load?ctx=r2", "{occupancy:0.25}\n", "text/plain");
  REQUIRE(fx.rt->quiesce(10s));

  SUBCASE("query single target") {
    res = fx.client->Get("/query?target=r1@occupancy&q=avg(occupancy)");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    auto recs = parse_lines(res->body);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].find("avg")->as_float() == 0.75);
  }

  SUBCASE("fan-out query with sort|head finds the least occupied") {
    res = fx.client->Get(
        "/query?target=kind:*/*/Room@occupancy&q=sort%20occupancy%20%7C%20head");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    auto recs = parse_lines(res->body);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].find("occupancy")->as_float() == 0.25);
    CHECK(recs[0].find("_ctx")->as_string() == "r2");
  }

  SUBCASE("status codes") {
    CHECK(fx.client->Get("/query?target=ghost@x&q=")->status == 404);
    CHECK(fx.client->Get("/query?target=r1@occupancy&q=bogus%20op")->status == 400);
    CHECK(fx.client->Post("/load?ctx=ghost", "{a:1}\n", "text/plain")->status ==
          404);
    CHECK(fx.client->Post("/load?ctx=r1", "{a:", "text/plain")->status == 400);
  }

  SUBCASE("contexts listing") {
    res = fx.client->Get("/contexts");
    REQUIRE(res);
    auto recs = parse_lines(res->body);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].find("name")->as_string() == "r1");
    CHECK(recs[0].find("kind")->as_string() == "cot.dev/v1/Room");
  }
}

TEST_CASE("join endpoints and duplicate handling") {
  Fixture fx;
  fx.client->Post("/apply",
                  "kind: cot.dev/v1/Motion\nname: m\negress:\n  - name: detected\n"
                  "---\n"
                  "kind: cot.dev/v1/Room\nname: room\n"
                  "ingress:\n  - name: in\n    intent: [\"any@detected\"]\n",
                  "application/yaml");

  auto res = fx.client->Post("/join", "{child:\"m\",parent:\"room\"}\n",
                             "text/plain");
  REQUIRE(res);
  CHECK(res->status == 200);

  res = fx.client->Post("/join", "{child:\"m\",parent:\"room\"}\n", "text/plain");
  REQUIRE(res);
  CHECK(res->status == 409);

  res = fx.client->Post("/leave", "{child:\"m\",parent:\"room\"}\n", "text/plain");
  CHECK(res->status == 200);
  res = fx.client->Post("/leave", "{child:\"m\",parent:\"room\"}\n", "text/plain");
  CHECK(res->status == 409);

  res = fx.client->Post("/join", "{child:\"ghost\",parent:\"room\"}\n",
                        "text/plain");
  CHECK(res->status == 404);
  res = fx.client->Post("/join", "not a record", "text/plain");
  CHECK(res->status == 400);
}

TEST_CASE("role header enforced under the ACL regime") {
  AclTable acl;
  acl.add("staff", *TargetPattern::parse("*@energy"));
  acl.add("staff", *TargetPattern::parse("*@occupancy"));
  acl.add("student", *TargetPattern::parse("BioLab@occupancy"));
  Fixture fx(acl);
  fx.client->Post("/apply",
                  "kind: cot.dev/v1/Building\nname: BioHall\n"
                  "egress:\n  - name: energy\n"
                  "---\n"
                  "kind: cot.dev/v1/Room\nname: BioLab\n"
                  "egress:\n  - name: occupancy\n",
                  "application/yaml");
  fx.client->Post("/load?ctx=BioHall", "{room_energy:80}\n", "text/plain");
  REQUIRE(fx.rt->quiesce(10s));

  httplib::Headers student{{"X-Role", "student"}};
  httplib::Headers staff{{"X-Role", "staff"}};
  CHECK(fx.client->Get("/query?target=BioHall@energy&q=", student)->status == 403);
  CHECK(fx.client->Get("/query?target=BioHall@energy&q=", staff)->status == 200);
  CHECK(fx.client->Get("/query?target=BioLab@occupancy&q=", student)->status ==
        200);
}

TEST_CASE("watch streams view commits") {
  Fixture fx;
  fx.client->Post("/apply",
                  "kind: a/v1/x\nname: X\negress:\n  - name: e\n",
                  "application/yaml");
  fx.client->Post("/load?ctx=X", "{n:1}\n", "text/plain");
  REQUIRE(fx.rt->quiesce(10s));

  // A second record arrives while the stream is open.
  std::thread feeder([&] {
    std::this_thread::sleep_for(100ms);
    httplib::Client c2("127.0.0.1", fx.server->port());
    c2.Post("/load?ctx=X", "{n:2}\n", "text/plain");
  });

  std::string gathered;
  httplib::Client streamer("127.0.0.1", fx.server->port());
  streamer.set_read_timeout(5, 0);
  streamer.Get(
      "/watch?target=X@e", httplib::Headers{},
      [&](const httplib::Response& r) { return r.status == 200; },
      [&](const char* data, size_t len) {
        gathered.append(data, len);
        return parse_lines(gathered).size() < 2;  // stop after two records
      });
  feeder.join();
  auto recs = parse_lines(gathered);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].find("n")->as_int() == 1);
  CHECK(recs[1].find("n")->as_int() == 2);
}
