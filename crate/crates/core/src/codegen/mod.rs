//! Native code generation: the amalgamated harness, standalone reproducers,
//! and the process protocol used to run testcases against a built harness.

pub mod lexer;
pub mod native;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::outcome::DedupKey;
use crate::spec::{CodeBlock, Specification};
use crate::testcase::{ParamValue, Testcase, ValidationError};
use crate::vm::Program;

pub use native::{NativeBackend, NativeConfig};

/// Runtime macro header, also inlined into every harness.
pub const RUNTIME_HEADER: &str = include_str!("fuzz_runtime.h");
pub const RUNTIME_HEADER_NAME: &str = "fuzz_runtime.h";
pub const HARNESS_FILE_NAME: &str = "harness.cpp";

/// Spec-level field listing headers the block code needs.
pub const INCLUDES_FIELD: &str = "includes";

pub const PARAM_MACROS: &[&str] = &["FUZZ_PARAM", "FUZZ_PARAM_STR", "FUZZ_PARAM_FILE"];

const STORE_MACROS: &[&str] = &[
    "FUZZ_SET_ATTR_INT",
    "FUZZ_SET_ATTR_STR",
    "FUZZ_SET_ATTR_PTR",
    "FUZZ_GET_ATTR_INT",
    "FUZZ_GET_ATTR_STR",
    "FUZZ_GET_ATTR_PTR",
    "FUZZ_SET_ATTR_INT_GLOBAL",
    "FUZZ_SET_ATTR_STR_GLOBAL",
    "FUZZ_SET_ATTR_PTR_GLOBAL",
    "FUZZ_GET_ATTR_INT_GLOBAL",
    "FUZZ_GET_ATTR_STR_GLOBAL",
    "FUZZ_GET_ATTR_PTR_GLOBAL",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodegenError {
    #[error("block {block}: line {line} defines a function; blocks may only contain statements")]
    FunctionDefinition { block: String, line: usize },
    #[error("block {block} is a virtual block program; reproducers are native-only")]
    NativeOnly { block: String },
    #[error("testcase is not well formed: {0}")]
    IllFormed(#[from] ValidationError),
    #[error("spec field \"includes\" must be an array of strings")]
    BadIncludes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarnessSource {
    pub text: String,
    /// Block name to driver function ordinal.
    pub ordinals: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReproducerSource {
    pub file_name: String,
    pub text: String,
}

fn includes(spec: &Specification) -> Result<Vec<String>, CodegenError> {
    match spec.extra.get(INCLUDES_FIELD) {
        None => Ok(Vec::new()),
        Some(serde_json::Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or(CodegenError::BadIncludes))
            .collect(),
        Some(_) => Err(CodegenError::BadIncludes),
    }
}

fn include_line(h: &str) -> String {
    if h.starts_with('<') || h.starts_with('"') {
        format!("#include {h}\n")
    } else {
        format!("#include \"{h}\"\n")
    }
}

fn check_native(b: &CodeBlock) -> Result<(), CodegenError> {
    if Program::looks_like_program(b.body()) {
        return Err(CodegenError::NativeOnly {
            block: b.name.clone(),
        });
    }
    if let Some(line) = lexer::find_function_definition(b.body()) {
        return Err(CodegenError::FunctionDefinition {
            block: b.name.clone(),
            line,
        });
    }
    Ok(())
}

fn indent(code: &str, pad: &str) -> String {
    let mut out = String::new();
    for line in code.lines() {
        if line.trim().is_empty() {
            out.push('\n');
        } else {
            let _ = writeln!(out, "{pad}{line}");
        }
    }
    out
}

/// Output slots that pass an input through under the same name and type.
fn passthrough(b: &CodeBlock, out: usize) -> Option<usize> {
    let o = &b.outputs[out];
    b.inputs.iter().position(|i| i.name == o.name && i.ty == o.ty)
}

pub fn emit_harness(spec: &Specification) -> Result<HarnessSource, CodegenError> {
    let mut text = String::from("// Generated stitching harness.\n");
    for h in includes(spec)? {
        text.push_str(&include_line(&h));
    }
    text.push('\n');
    text.push_str(RUNTIME_HEADER);
    text.push_str("\n#include <cstdio>\n#include <fstream>\n#include <iterator>\n\n");

    let mut ordinals = BTreeMap::new();
    for (n, b) in spec.blocks.iter().enumerate() {
        check_native(b)?;
        ordinals.insert(b.name.clone(), n);
        let _ = writeln!(text, "// {}", b.name);
        let _ = writeln!(
            text,
            "static void func_{n}(void *const *fuzz_in, void **fuzz_out) {{"
        );
        for (j, p) in b.inputs.iter().enumerate() {
            let ty = spec.types[p.ty.index()].native_spelling();
            let _ = writeln!(text, "  {ty} {} = ({ty})fuzz_in[{j}];", p.name);
        }
        for (j, p) in b.outputs.iter().enumerate() {
            if passthrough(b, j).is_none() {
                let ty = spec.types[p.ty.index()].native_spelling();
                let _ = writeln!(text, "  {ty} {} = nullptr;", p.name);
            }
        }
        text.push_str("  [&]() {\n");
        text.push_str(&indent(b.body(), "    "));
        text.push_str("  }();\n");
        for (j, p) in b.outputs.iter().enumerate() {
            let _ = writeln!(text, "  fuzz_out[{j}] = (void *)({});", p.name);
        }
        text.push_str("}\n\n");
    }

    text.push_str(
        "struct fuzz_block {\n  void (*fn)(void *const *, void **);\n  unsigned n_in, n_out;\n};\n\n",
    );
    let _ = writeln!(
        text,
        "static const unsigned fuzz_block_count = {};",
        spec.blocks.len()
    );
    text.push_str("static const fuzz_block fuzz_blocks[] = {\n");
    for (n, b) in spec.blocks.iter().enumerate() {
        let _ = writeln!(
            text,
            "    {{func_{n}, {}, {}}},",
            b.inputs.len(),
            b.outputs.len()
        );
    }
    text.push_str("    {nullptr, 0, 0},\n};\n");
    text.push_str(HARNESS_MAIN);
    Ok(HarnessSource { text, ordinals })
}

const HARNESS_MAIN: &str = r#"
struct fuzz_instance {
  uint32_t block;
  std::vector<uint32_t> refs;
  std::vector<fuzz_rt::Param> params;
};

[[noreturn]] static void fuzz_reject(const char *why) {
  fuzz_rt::status(std::string("ERR ") + why + "\n");
  std::fprintf(stderr, "harness: %s\n", why);
  ::_exit(65);
}

int main(int argc, char **argv) {
  fuzz_rt::open_status();
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s TESTCASE\n", argv[0]);
    return 64;
  }
  std::ifstream in(argv[1], std::ios::binary);
  if (!in) fuzz_reject("cannot read testcase");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  size_t pos = 0;
  auto take = [&](size_t n) -> const char * {
    if (buf.size() - pos < n) fuzz_reject("truncated testcase");
    const char *p = buf.data() + pos;
    pos += n;
    return p;
  };
  auto u32 = [&]() -> uint32_t {
    const unsigned char *p = reinterpret_cast<const unsigned char *>(take(4));
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
  };
  if (std::string(take(4), 4) != "STCH") fuzz_reject("bad magic");
  if (u32() != 1) fuzz_reject("unsupported wire version");
  uint32_t count = u32();
  std::vector<fuzz_instance> insts;
  for (uint32_t i = 0; i < count; i++) {
    fuzz_instance inst;
    inst.block = u32();
    uint32_t nrefs = u32();
    for (uint32_t r = 0; r < nrefs; r++) inst.refs.push_back(u32());
    uint32_t nparams = u32();
    for (uint32_t k = 0; k < nparams; k++) {
      fuzz_rt::Param p;
      p.kind = static_cast<uint8_t>(*take(1));
      uint32_t len = u32();
      p.bytes.assign(take(len), len);
      inst.params.push_back(std::move(p));
    }
    insts.push_back(std::move(inst));
  }
  if (pos != buf.size()) fuzz_reject("trailing bytes");

  fuzz_rt::map_coverage();
  std::vector<void *> slots;
  fuzz_rt::State &st = fuzz_rt::state();
  for (size_t i = 0; i < insts.size(); i++) {
    const fuzz_instance &inst = insts[i];
    if (inst.block >= fuzz_block_count) fuzz_reject("block index out of range");
    const fuzz_block &b = fuzz_blocks[inst.block];
    if (inst.refs.size() != b.n_in) fuzz_reject("wrong reference count");
    std::vector<void *> ins, outs(b.n_out + 1, nullptr);
    for (uint32_t r : inst.refs) {
      if (r >= slots.size()) fuzz_reject("forward reference");
      ins.push_back(slots[r]);
    }
    ins.push_back(nullptr);
    fuzz_rt::status("AT " + std::to_string(i) + "\n");
    st.instance = i;
    st.params = &inst.params;
    st.next_param = 0;
    b.fn(ins.data(), outs.data());
    slots.insert(slots.end(), outs.begin(), outs.begin() + b.n_out);
  }
  fuzz_rt::status("OK\n");
  return 0;
}
"#;

const REPRO_STORE: &str = r#"// Minimal typestate store backing the inlined blocks.
namespace repro_store {
struct Value {
  int kind;
  int64_t i;
  std::string s;
  const void *p;
};
static std::map<const void *, std::map<std::string, Value>> objects;
static std::map<std::string, Value> globals;
static const Value &get(std::map<std::string, Value> &m, const char *k, int kind) {
  auto it = m.find(k);
  if (it == m.end() || it->second.kind != kind) std::exit(0);
  return it->second;
}
}  // namespace repro_store

static void repro_set_attr_int(const void *o, const char *k, int64_t v) { repro_store::objects[o][k] = {0, v, "", nullptr}; }
static void repro_set_attr_str(const void *o, const char *k, const std::string &v) { repro_store::objects[o][k] = {1, 0, v, nullptr}; }
static void repro_set_attr_ptr(const void *o, const char *k, const void *v) { repro_store::objects[o][k] = {2, 0, "", v}; }
static int64_t repro_get_attr_int(const void *o, const char *k) { return repro_store::get(repro_store::objects[o], k, 0).i; }
static std::string repro_get_attr_str(const void *o, const char *k) { return repro_store::get(repro_store::objects[o], k, 1).s; }
static void *repro_get_attr_ptr(const void *o, const char *k) { return const_cast<void *>(repro_store::get(repro_store::objects[o], k, 2).p); }
static void repro_set_attr_int_global(const char *k, int64_t v) { repro_store::globals[k] = {0, v, "", nullptr}; }
static void repro_set_attr_str_global(const char *k, const std::string &v) { repro_store::globals[k] = {1, 0, v, nullptr}; }
static void repro_set_attr_ptr_global(const char *k, const void *v) { repro_store::globals[k] = {2, 0, "", v}; }
static int64_t repro_get_attr_int_global(const char *k) { return repro_store::get(repro_store::globals, k, 0).i; }
static std::string repro_get_attr_str_global(const char *k) { return repro_store::get(repro_store::globals, k, 1).s; }
static void *repro_get_attr_ptr_global(const char *k) { return const_cast<void *>(repro_store::get(repro_store::globals, k, 2).p); }
"#;

pub fn reproducer_file_name(key: &DedupKey) -> String {
    format!("repro_{}.cpp", key.slug())
}

/// Block code with every runtime macro replaced: parameter sites by literals
/// (declared into `decls`), bailouts by a clean exit, typestate macros by
/// the embedded store.
fn inline_block(code: &str, params: &[ParamValue], tag: &str, decls: &mut String) -> String {
    let mut names: Vec<&str> = PARAM_MACROS.to_vec();
    names.extend(STORE_MACROS);
    names.push("FUZZ_BAIL");
    let mut out = String::new();
    let mut last = 0;
    let mut k = 0;
    for site in lexer::call_sites(code, &names) {
        out.push_str(&code[last..site.start]);
        last = site.end;
        let replacement = match site.name.as_str() {
            "FUZZ_BAIL" => "std::exit(0)".to_string(),
            "FUZZ_PARAM" => {
                let ty = site.args.trim();
                let bytes = params.get(k).map_or(&[][..], |v| &v.bytes[..]);
                let var = format!("param_{tag}_{k}");
                k += 1;
                let _ = writeln!(
                    decls,
                    "  alignas(std::max_align_t) static unsigned char {var}[sizeof({ty}) > {n} ? sizeof({ty}) : {n}] = {init};",
                    n = bytes.len(),
                    init = if bytes.is_empty() { "{}".to_string() } else { lexer::byte_array(bytes) },
                );
                format!("reinterpret_cast<{ty} *>({var})")
            }
            "FUZZ_PARAM_STR" | "FUZZ_PARAM_FILE" => {
                let bytes = params.get(k).map_or(&[][..], |v| &v.bytes[..]);
                k += 1;
                lexer::string_literal(bytes)
            }
            store => format!("repro_{}({})", store["FUZZ_".len()..].to_ascii_lowercase(), site.args),
        };
        out.push_str(&replacement);
    }
    out.push_str(&code[last..]);
    out
}

/// Standalone source replaying `t` with every block inlined into `main`.
pub fn emit_reproducer(
    spec: &Specification,
    t: &Testcase,
    key: Option<&DedupKey>,
) -> Result<ReproducerSource, CodegenError> {
    t.validate(spec)?;
    for b in &spec.blocks {
        check_native(b)?;
    }
    let mut text = String::new();
    match key {
        Some(k) => {
            let _ = writeln!(text, "// Reproducer for {k}.");
        }
        None => text.push_str("// Reproducer.\n"),
    }
    text.push_str("#include <cstddef>\n#include <cstdint>\n#include <cstdlib>\n#include <map>\n#include <string>\n");
    for h in includes(spec)? {
        text.push_str(&include_line(&h));
    }
    text.push('\n');
    text.push_str(REPRO_STORE);
    text.push_str("\nint main() {\n");

    // one named local per flat output
    let mut vars: Vec<String> = Vec::new();
    for inst in &t.instances {
        let b = spec.block(inst.block);
        for p in &b.outputs {
            let name = format!("{}_{}", p.name, vars.len());
            let ty = spec.types[p.ty.index()].native_spelling();
            let _ = writeln!(text, "  {ty} {name} = nullptr;");
            vars.push(name);
        }
    }

    let mut produced = 0;
    for (i, inst) in t.instances.iter().enumerate() {
        let b = spec.block(inst.block);
        let _ = writeln!(text, "\n  // {i}: {}", b.name);
        let mut decls = String::new();
        let body = inline_block(b.body(), &inst.params.values, &i.to_string(), &mut decls);
        text.push_str(&decls);
        for j in 0..b.outputs.len() {
            if let Some(src) = passthrough(b, j) {
                let _ = writeln!(
                    text,
                    "  {} = {};",
                    vars[produced + j],
                    vars[inst.refs[src] as usize]
                );
            }
        }
        text.push_str("  [&]() {\n");
        for (j, p) in b.inputs.iter().enumerate() {
            if b.outputs.iter().any(|o| o.name == p.name) {
                continue;
            }
            let ty = spec.types[p.ty.index()].native_spelling();
            let _ = writeln!(text, "    {ty} {} = {};", p.name, vars[inst.refs[j] as usize]);
        }
        for (j, p) in b.outputs.iter().enumerate() {
            let ty = spec.types[p.ty.index()].native_spelling();
            let _ = writeln!(text, "    {ty} &{} = {};", p.name, vars[produced + j]);
        }
        text.push_str(&indent(&body, "    "));
        text.push_str("  }();\n");
        produced += b.outputs.len();
    }
    text.push_str("  return 0;\n}\n");
    Ok(ReproducerSource {
        file_name: key.map_or_else(|| "repro.cpp".to_string(), reproducer_file_name),
        text,
    })
}
