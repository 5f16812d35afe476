# scripts/verify_install.py
# Minimal smoke test for gridsync + its numeric stack

try:
        import gridsync
        from gridsync.dispatch import DispatchProblem, solve_sfc
except Exception as e:
        print("gridsync import failed:", e)
        raise SystemExit(1)

print("gridsync version:", getattr(gridsync, "__version__", "unknown"))

# Solve the four-unit dispatch table to ensure scipy/numpy work
sol = solve_sfc(DispatchProblem.ne39_costs(3414.0))
print("Dispatch OK: lambda =", round(sol.lam, 5))

# Extra: parse a bundled scenario to ensure json5/networkx work
from gridsync.scenario import parse_scenario
from gridsync.scenarios import bundled_path

scenario = parse_scenario(bundled_path("desk4"))
print("Scenario OK:", scenario.name, scenario.network.n_bus, "buses")
