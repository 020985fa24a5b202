#include "forge/lowering.hpp"

#include <algorithm>
#include <unordered_map>

#include <json.hpp>

#include "forge/ops.hpp"

namespace forge {

std::string to_string(Device d) { return d == Device::Npu ? "npu" : "cpu"; }

Device route_kernel(const std::string& kernel, const LoweringOptions& options) {
  if (!is_known_op(kernel))
    throw LoweringError("cannot route unknown kernel '" + kernel + "'");
  const auto& eligible =
      options.npu_eligible.empty() ? default_npu_eligible() : options.npu_eligible;
  return eligible.count(kernel) ? Device::Npu : Device::Cpu;
}

IRProgram lower(const Graph& g, const LoweringOptions& options) {
  validate_or_throw(g);

  for (const auto& n : g.nodes)
    if (n.kind == NodeKind::Constant && !g.constants.count(n.id))
      throw LoweringError("constant '" + n.id +
                          "' has no payload; resolve tied weights first");

  std::vector<const GraphNode*> placeholders;
  for (const auto& n : g.nodes)
    if (n.kind == NodeKind::Placeholder) placeholders.push_back(&n);
  if (placeholders.size() > 1)
    throw LoweringError("program supports at most one placeholder input, found " +
                        std::to_string(placeholders.size()));

  IRProgram program;
  std::unordered_map<std::string, int32_t> reg_of;
  int32_t next_reg = 0;

  // Dense numbering: constants, then the input, then instruction outputs.
  for (const auto& n : g.nodes) {
    if (n.kind != NodeKind::Constant) continue;
    program.constants[next_reg] = g.constants.at(n.id).value;
    reg_of[n.id] = next_reg++;
  }
  if (!placeholders.empty()) {
    const GraphNode* input = placeholders[0];
    program.input_reg = next_reg;
    reg_of[input->id] = next_reg++;
    auto it = input->attrs.find("shape");
    if (it != input->attrs.end())
      if (const auto* dims = std::get_if<std::vector<int64_t>>(&it->second))
        program.input_shape = *dims;
  }

  for (const auto& n : g.nodes) {
    if (n.kind != NodeKind::CallOp) continue;
    IRInstruction inst;
    inst.op_id = static_cast<int32_t>(program.instructions.size());
    inst.kernel = n.op_name;
    inst.device = route_kernel(n.op_name, options);
    inst.opcode =
        inst.device == Device::Npu ? "npu.module" : "cpu.fn." + n.op_name;
    for (const auto& a : n.args) {
      if (const auto* ref = std::get_if<NodeRef>(&a)) {
        auto it = reg_of.find(ref->id);
        if (it == reg_of.end())
          throw LoweringError("node '" + n.id + "': argument '" + ref->id +
                              "' has no register");
        RegRef rr{it->second};
        inst.frozen_args.emplace_back(rr);
        if (std::find(inst.input_regs.begin(), inst.input_regs.end(), rr.reg) ==
            inst.input_regs.end())
          inst.input_regs.push_back(rr.reg);
      } else if (const auto* lit = std::get_if<Literal>(&a)) {
        inst.frozen_args.emplace_back(*lit);
      } else {
        inst.frozen_args.emplace_back(std::get<ShapeLiteral>(a));
      }
    }
    inst.frozen_attrs = n.attrs;
    inst.output_reg = next_reg;
    reg_of[n.id] = next_reg++;
    if (inst.device == Device::Npu)
      ++program.placement.npu_instructions;
    else
      ++program.placement.cpu_instructions;
    program.instructions.push_back(std::move(inst));
  }

  const GraphNode& out = g.output_node();
  const auto& out_ref = std::get<NodeRef>(out.args[0]);
  auto it = reg_of.find(out_ref.id);
  if (it == reg_of.end())
    throw LoweringError("output references '" + out_ref.id +
                        "' which has no register");
  program.output_reg = it->second;
  program.reg_count = next_reg;

  const auto& eligible =
      options.npu_eligible.empty() ? default_npu_eligible() : options.npu_eligible;
  program.placement.npu_eligible.assign(eligible.begin(), eligible.end());

  return program;
}

std::string emit_ir_json(const IRProgram& program) {
  using json = nlohmann::ordered_json;
  json doc = json::object();
  doc["reg_count"] = program.reg_count;
  doc["input_reg"] = program.input_reg;
  doc["output_reg"] = program.output_reg;
  json placement = json::object();
  placement["npu_instructions"] = program.placement.npu_instructions;
  placement["cpu_instructions"] = program.placement.cpu_instructions;
  placement["npu_eligible"] = program.placement.npu_eligible;
  doc["placement"] = std::move(placement);
  json consts = json::array();
  for (const auto& [reg, _] : program.constants) consts.push_back(reg);
  doc["constant_regs"] = std::move(consts);
  json instrs = json::array();
  for (const auto& inst : program.instructions) {
    json ji = json::object();
    ji["idx"] = inst.op_id;
    ji["opcode"] = inst.opcode;
    ji["device"] = to_string(inst.device);
    ji["out"] = inst.output_reg;
    ji["ins"] = inst.input_regs;
    ji["kernel"] = inst.kernel;
    instrs.push_back(std::move(ji));
  }
  doc["instructions"] = std::move(instrs);
  return doc.dump(2);
}

}  // namespace forge
