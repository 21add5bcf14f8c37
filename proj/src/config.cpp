#include "amdflow/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#define TOML_HEADER_ONLY 1
#include "tomlplusplus/toml.hpp"

namespace amdflow {

namespace fs = std::filesystem;

namespace {

std::string join(std::string_view prefix, std::string_view key)
{
    return prefix.empty() ? std::string(key) : std::string(prefix) + "." + std::string(key);
}

class Reader {
public:
    std::vector<std::string> diags;

    void fail(const std::string& field, const std::string& message) { diags.push_back(field + ": " + message); }

    void reject_unknown(const toml::table& t, std::string_view prefix, std::initializer_list<std::string_view> allowed)
    {
        for (const auto& [key, node] : t) {
            if (std::find(allowed.begin(), allowed.end(), key.str()) == allowed.end())
                fail(join(prefix, key.str()), "unknown field");
        }
    }

    std::optional<double> number(const toml::table& t, std::string_view prefix, std::string_view key)
    {
        const toml::node* node = t.get(key);
        if (!node)
            return std::nullopt;
        if (auto f = node->as_floating_point())
            return f->get();
        if (auto i = node->as_integer())
            return static_cast<double>(i->get());
        fail(join(prefix, key), "expected a number");
        return std::nullopt;
    }

    std::optional<std::int64_t> integer(const toml::table& t, std::string_view prefix, std::string_view key)
    {
        const toml::node* node = t.get(key);
        if (!node)
            return std::nullopt;
        if (auto i = node->as_integer())
            return i->get();
        fail(join(prefix, key), "expected an integer");
        return std::nullopt;
    }

    std::optional<std::size_t> count(const toml::table& t, std::string_view prefix, std::string_view key)
    {
        auto v = integer(t, prefix, key);
        if (!v)
            return std::nullopt;
        if (*v < 0) {
            fail(join(prefix, key), "must not be negative");
            return std::nullopt;
        }
        return static_cast<std::size_t>(*v);
    }

    std::optional<bool> boolean(const toml::table& t, std::string_view prefix, std::string_view key)
    {
        const toml::node* node = t.get(key);
        if (!node)
            return std::nullopt;
        if (auto b = node->as_boolean())
            return b->get();
        fail(join(prefix, key), "expected true or false");
        return std::nullopt;
    }

    std::optional<std::string> string(const toml::table& t, std::string_view prefix, std::string_view key)
    {
        const toml::node* node = t.get(key);
        if (!node)
            return std::nullopt;
        if (auto s = node->as_string())
            return s->get();
        fail(join(prefix, key), "expected a string");
        return std::nullopt;
    }

    std::optional<std::vector<std::string>> strings(const toml::table& t, std::string_view prefix,
                                                    std::string_view key)
    {
        const toml::node* node = t.get(key);
        if (!node)
            return std::nullopt;
        if (auto s = node->as_string())
            return std::vector<std::string>{s->get()};
        const toml::array* arr = node->as_array();
        if (!arr) {
            fail(join(prefix, key), "expected a list of strings");
            return std::nullopt;
        }
        std::vector<std::string> out;
        for (const auto& item : *arr) {
            auto s = item.as_string();
            if (!s) {
                fail(join(prefix, key), "expected a list of strings");
                return std::nullopt;
            }
            out.push_back(s->get());
        }
        return out;
    }

    std::optional<ResourceClass> resource_class(const toml::table& t, std::string_view prefix, std::string_view key)
    {
        auto s = string(t, prefix, key);
        if (!s)
            return std::nullopt;
        try {
            return resource_class_from(*s);
        } catch (const std::exception&) {
            fail(join(prefix, key), "expected \"cpu\" or \"accelerator\", got \"" + *s + "\"");
            return std::nullopt;
        }
    }

    const toml::table* section(const toml::table& t, std::string_view key)
    {
        const toml::node* node = t.get(key);
        if (!node)
            return nullptr;
        if (auto tbl = node->as_table())
            return tbl;
        fail(std::string(key), "expected a table");
        return nullptr;
    }
};

fs::path resolve(const fs::path& base, const std::string& p)
{
    fs::path path(p);
    if (path.is_relative())
        path = base / path;
    return path.lexically_normal();
}

void read_predictor(Reader& r, const toml::table& t, PredictorConfig& p)
{
    const std::string_view pre = "predictor";
    r.reject_unknown(t, pre, {"kind", "command", "batch_size", "threshold_ef", "top_k", "timeout_seconds",
                              "resource_class"});
    if (auto kind = r.string(t, pre, "kind")) {
        if (*kind == "builtin")
            p.kind = PredictorConfig::Kind::builtin;
        else if (*kind == "external")
            p.kind = PredictorConfig::Kind::external;
        else
            r.fail("predictor.kind", "expected \"builtin\" or \"external\", got \"" + *kind + "\"");
    }
    if (auto cmd = r.strings(t, pre, "command"))
        p.command = *cmd;
    if (auto n = r.count(t, pre, "batch_size"))
        p.batch_size = *n;
    if (const toml::node* node = t.get("threshold_ef")) {
        if (auto s = node->as_string(); s && s->get() == "none")
            p.threshold_ef.reset();
        else if (auto v = r.number(t, pre, "threshold_ef"))
            p.threshold_ef = *v;
    }
    if (auto k = r.count(t, pre, "top_k"))
        p.top_k = *k;
    if (auto v = r.number(t, pre, "timeout_seconds"))
        p.timeout_seconds = *v;
    if (auto c = r.resource_class(t, pre, "resource_class"))
        p.resource_class = *c;
}

void read_calculator(Reader& r, const toml::table& t, CalculatorConfig& c)
{
    const std::string_view pre = "calculator";
    r.reject_unknown(t, pre, {"kind", "command", "time_limit_seconds", "resource_class", "mock_delay_ms"});
    if (auto kind = r.string(t, pre, "kind")) {
        if (*kind == "mock")
            c.kind = CalcJobSpec::Kind::mock;
        else if (*kind == "external")
            c.kind = CalcJobSpec::Kind::external;
        else
            r.fail("calculator.kind", "expected \"mock\" or \"external\", got \"" + *kind + "\"");
    }
    if (auto cmd = r.strings(t, pre, "command"))
        c.command = *cmd;
    if (auto v = r.number(t, pre, "time_limit_seconds"))
        c.time_limit_seconds = *v;
    if (auto cls = r.resource_class(t, pre, "resource_class"))
        c.resource_class = *cls;
    if (auto ms = r.count(t, pre, "mock_delay_ms"))
        c.mock_delay = std::chrono::milliseconds(*ms);
}

void read_pools(Reader& r, const toml::node& node, std::vector<PoolConfig>& pools)
{
    const toml::array* arr = node.as_array();
    if (!arr) {
        r.fail("pools", "expected an array of tables ([[pools]])");
        return;
    }
    for (std::size_t i = 0; i < arr->size(); ++i) {
        const std::string pre = "pools[" + std::to_string(i) + "]";
        const toml::table* t = (*arr)[i].as_table();
        if (!t) {
            r.fail(pre, "expected a table");
            continue;
        }
        r.reject_unknown(*t, pre, {"name", "resource_class", "size"});
        PoolConfig pool;
        if (auto name = r.string(*t, pre, "name"))
            pool.name = *name;
        if (auto cls = r.resource_class(*t, pre, "resource_class"))
            pool.resource_class = *cls;
        if (auto size = r.count(*t, pre, "size"))
            pool.size = *size;
        pools.push_back(std::move(pool));
    }
}

void add_default_pools(RunConfig& cfg)
{
    const std::size_t cores = std::max(1u, std::thread::hardware_concurrency());
    cfg.pools.push_back(PoolConfig{"cpu", ResourceClass::cpu, cores});
    if (cfg.predictor.resource_class == ResourceClass::accelerator ||
        cfg.calculator.resource_class == ResourceClass::accelerator)
        cfg.pools.push_back(PoolConfig{"accelerator", ResourceClass::accelerator, 1});
}

} // namespace

CalcJobSpec CalculatorConfig::job(std::string id, CrystalStructure structure) const
{
    return CalcJobSpec{std::move(id), std::move(structure), kind, command, time_limit_seconds, resource_class,
                       mock_delay};
}

ConfigError::ConfigError(std::vector<std::string> diagnostics)
    : std::runtime_error(diagnostics.empty() ? std::string("invalid configuration")
                                             : "invalid configuration: " + diagnostics.front())
    , diagnostics_(std::move(diagnostics))
{
}

RunConfig parse_config(const std::string& toml_text, const fs::path& base_dir)
{
    toml::table root;
    try {
        root = toml::parse(toml_text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "line " << e.source().begin.line << ", column " << e.source().begin.column << ": "
            << e.description();
        throw ConfigError({"syntax: " + msg.str()});
    }

    const fs::path base = fs::absolute(base_dir);
    Reader r;
    RunConfig cfg;
    r.reject_unknown(root, "", {"system", "templates_dir", "work_dir", "max_candidates", "allow_fewer",
                                "dedup_threshold", "e_cut_promote", "references", "max_attempts", "predictor",
                                "calculator", "fingerprint", "pools"});

    if (auto sys = r.strings(root, "", "system")) {
        for (const auto& s : *sys) {
            if (ElementSymbol::is_valid(s))
                cfg.system.emplace_back(s);
            else
                r.fail("system", "unknown element symbol \"" + s + "\"");
        }
    } else if (!root.contains("system")) {
        r.fail("system", "required");
    }
    if (auto p = r.string(root, "", "templates_dir"))
        cfg.templates_dir = resolve(base, *p);
    else if (!root.contains("templates_dir"))
        r.fail("templates_dir", "required");
    if (auto p = r.string(root, "", "work_dir"))
        cfg.work_dir = resolve(base, *p);
    else if (!root.contains("work_dir"))
        r.fail("work_dir", "required");
    if (auto n = r.count(root, "", "max_candidates"))
        cfg.max_candidates = *n;
    if (auto b = r.boolean(root, "", "allow_fewer"))
        cfg.allow_fewer = *b;
    if (auto v = r.number(root, "", "dedup_threshold"))
        cfg.dedup_threshold = *v;
    if (auto v = r.number(root, "", "e_cut_promote"))
        cfg.e_cut_promote = *v;
    if (auto p = r.string(root, "", "references"))
        cfg.references = resolve(base, *p);
    if (auto n = r.integer(root, "", "max_attempts"))
        cfg.max_attempts = static_cast<int>(std::clamp<std::int64_t>(*n, -1, 1000000));

    if (auto t = r.section(root, "predictor"))
        read_predictor(r, *t, cfg.predictor);
    if (auto t = r.section(root, "calculator"))
        read_calculator(r, *t, cfg.calculator);
    if (auto t = r.section(root, "fingerprint")) {
        r.reject_unknown(*t, "fingerprint", {"cutoff", "bin_width", "smearing_sigma"});
        if (auto v = r.number(*t, "fingerprint", "cutoff"))
            cfg.fingerprint.cutoff = *v;
        if (auto v = r.number(*t, "fingerprint", "bin_width"))
            cfg.fingerprint.bin_width = *v;
        if (auto v = r.number(*t, "fingerprint", "smearing_sigma"))
            cfg.fingerprint.smearing_sigma = *v;
    }
    if (const toml::node* pools = root.get("pools"))
        read_pools(r, *pools, cfg.pools);
    else
        add_default_pools(cfg);

    if (r.diags.empty())
        r.diags = validate_config(cfg);
    if (!r.diags.empty())
        throw ConfigError(std::move(r.diags));
    return cfg;
}

RunConfig load_config(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError({"config: cannot read " + path.string()});
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), fs::absolute(path).parent_path());
}

std::vector<std::string> validate_config(const RunConfig& cfg)
{
    std::vector<std::string> d;
    auto fail = [&](const std::string& field, const std::string& msg) { d.push_back(field + ": " + msg); };

    if (cfg.system.size() < 2 || cfg.system.size() > 6)
        fail("system", "expected 2 to 6 elements, got " + std::to_string(cfg.system.size()));
    if (std::set<ElementSymbol>(cfg.system.begin(), cfg.system.end()).size() != cfg.system.size())
        fail("system", "elements must be distinct");

    std::error_code ec;
    if (cfg.templates_dir.empty())
        fail("templates_dir", "required");
    else if (!fs::is_directory(cfg.templates_dir, ec))
        fail("templates_dir", "not a directory: " + cfg.templates_dir.string());
    if (cfg.work_dir.empty())
        fail("work_dir", "required");
    else if (fs::exists(cfg.work_dir, ec) && !fs::is_directory(cfg.work_dir, ec))
        fail("work_dir", "exists and is not a directory: " + cfg.work_dir.string());
    if (cfg.references && !fs::is_regular_file(*cfg.references, ec))
        fail("references", "file not found: " + cfg.references->string());

    if (cfg.max_candidates < 1)
        fail("max_candidates", "must be at least 1");
    if (!(cfg.dedup_threshold > 0.0 && cfg.dedup_threshold <= 1.0))
        fail("dedup_threshold", "must be in (0, 1]");
    if (!(cfg.e_cut_promote >= 0.0) || !std::isfinite(cfg.e_cut_promote))
        fail("e_cut_promote", "must be a finite value >= 0");
    if (cfg.max_attempts < 1)
        fail("max_attempts", "must be at least 1");

    try {
        cfg.predictor.validate();
    } catch (const std::exception& e) {
        fail("predictor", e.what());
    }
    if (cfg.calculator.kind == CalcJobSpec::Kind::external && cfg.calculator.command.empty())
        fail("calculator.command", "required for an external calculator");
    if (!(cfg.calculator.time_limit_seconds > 0) || !std::isfinite(cfg.calculator.time_limit_seconds))
        fail("calculator.time_limit_seconds", "must be positive");
    try {
        cfg.fingerprint.validate();
    } catch (const std::exception& e) {
        fail("fingerprint", e.what());
    }

    std::set<std::string> names;
    std::set<ResourceClass> classes;
    for (std::size_t i = 0; i < cfg.pools.size(); ++i) {
        const auto& p = cfg.pools[i];
        const std::string field = "pools[" + std::to_string(i) + "]";
        if (p.name.empty())
            fail(field + ".name", "required");
        else if (p.name.find_first_of("= \t\r\n#") != std::string::npos)
            fail(field + ".name", "must not contain whitespace, '=' or '#'");
        else if (!names.insert(p.name).second)
            fail(field + ".name", "duplicate pool name \"" + p.name + "\"");
        classes.insert(p.resource_class);
    }
    std::set<ResourceClass> needed{ResourceClass::cpu, cfg.predictor.resource_class, cfg.calculator.resource_class};
    for (ResourceClass cls : needed)
        if (!classes.count(cls))
            fail("pools", "no pool for resource class " + std::string(to_string(cls)));
    return d;
}

std::string config_to_toml(const RunConfig& cfg)
{
    auto string_array = [](const std::vector<std::string>& v) {
        toml::array a;
        for (const auto& s : v)
            a.push_back(s);
        return a;
    };
    std::vector<std::string> system;
    for (const auto& e : cfg.system)
        system.push_back(e.str());

    toml::table root;
    root.insert("system", string_array(system));
    root.insert("templates_dir", fs::absolute(cfg.templates_dir).lexically_normal().string());
    root.insert("work_dir", fs::absolute(cfg.work_dir).lexically_normal().string());
    root.insert("max_candidates", static_cast<std::int64_t>(cfg.max_candidates));
    root.insert("allow_fewer", cfg.allow_fewer);
    root.insert("dedup_threshold", cfg.dedup_threshold);
    root.insert("e_cut_promote", cfg.e_cut_promote);
    if (cfg.references)
        root.insert("references", fs::absolute(*cfg.references).lexically_normal().string());
    root.insert("max_attempts", static_cast<std::int64_t>(cfg.max_attempts));

    toml::table pred;
    pred.insert("kind", cfg.predictor.kind == PredictorConfig::Kind::builtin ? "builtin" : "external");
    if (!cfg.predictor.command.empty())
        pred.insert("command", string_array(cfg.predictor.command));
    pred.insert("batch_size", static_cast<std::int64_t>(cfg.predictor.batch_size));
    if (cfg.predictor.threshold_ef)
        pred.insert("threshold_ef", *cfg.predictor.threshold_ef);
    else
        pred.insert("threshold_ef", "none");
    if (cfg.predictor.top_k)
        pred.insert("top_k", static_cast<std::int64_t>(*cfg.predictor.top_k));
    pred.insert("timeout_seconds", cfg.predictor.timeout_seconds);
    pred.insert("resource_class", std::string(to_string(cfg.predictor.resource_class)));
    root.insert("predictor", std::move(pred));

    toml::table calc;
    calc.insert("kind", cfg.calculator.kind == CalcJobSpec::Kind::mock ? "mock" : "external");
    if (!cfg.calculator.command.empty())
        calc.insert("command", string_array(cfg.calculator.command));
    calc.insert("time_limit_seconds", cfg.calculator.time_limit_seconds);
    calc.insert("resource_class", std::string(to_string(cfg.calculator.resource_class)));
    calc.insert("mock_delay_ms", static_cast<std::int64_t>(cfg.calculator.mock_delay.count()));
    root.insert("calculator", std::move(calc));

    toml::table fp;
    fp.insert("cutoff", cfg.fingerprint.cutoff);
    fp.insert("bin_width", cfg.fingerprint.bin_width);
    fp.insert("smearing_sigma", cfg.fingerprint.smearing_sigma);
    root.insert("fingerprint", std::move(fp));

    toml::array pools;
    for (const auto& p : cfg.pools) {
        toml::table t;
        t.insert("name", p.name);
        t.insert("resource_class", std::string(to_string(p.resource_class)));
        t.insert("size", static_cast<std::int64_t>(p.size));
        pools.push_back(std::move(t));
    }
    root.insert("pools", std::move(pools));

    std::ostringstream out;
    out << root << "\n";
    return out.str();
}

} // namespace amdflow
