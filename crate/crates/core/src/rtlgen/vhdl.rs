//! VHDL-2008 templates for the time-multiplexed datapath.
//!
//! Every layer entity shares one handshake: `start` is sampled in `S_IDLE`,
//! the datapath runs for its scheduled cycles, then the control FSM spends
//! the remaining overhead cycles before pulsing `done` for one cycle. With an
//! overhead of at least two cycles, start-to-done latency equals the
//! estimator's per-layer cycle count exactly.
//!
//! Vectors cross entity boundaries flattened: element `k` occupies bits
//! `k*N+N-1 downto k*N`.

use std::fmt::Write;

use super::rom::{literal, render_rom};
use crate::fixsim::accumulator_bits;
use crate::model_ir::ActivationKind;
use crate::quantizer::{FixedPointFormat, QuantizedTensor};

pub(crate) const HEADER: &str = "-- Generated by nnaccel. Do not edit.\n";

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ctx {
    pub fmt: FixedPointFormat,
    pub parallel: usize,
    pub overhead: u64,
}

impl Ctx {
    fn n(&self) -> u32 {
        self.fmt.total_bits()
    }

    fn lit(&self, code: i64) -> String {
        literal(code, self.n())
    }
}

fn libraries(out: &mut String) {
    out.push_str(HEADER);
    out.push_str("library ieee;\nuse ieee.std_logic_1164.all;\nuse ieee.numeric_std.all;\n");
}

fn entity_decl(out: &mut String, name: &str, in_len: usize, out_len: usize, n: u32) {
    let _ = write!(
        out,
        "\nentity {name} is\n  port (\n    clk   : in  std_logic;\n    rst   : in  std_logic;\n    \
         start : in  std_logic;\n    x_in  : in  std_logic_vector({in_len}*{n}-1 downto 0);\n    \
         y_out : out std_logic_vector({out_len}*{n}-1 downto 0);\n    done  : out std_logic\n  \
         );\nend entity {name};\n"
    );
}

/// Constants and helper functions shared by every datapath architecture.
fn fixed_decls(out: &mut String, ctx: &Ctx, acc_w: u32) {
    let fmt = ctx.fmt;
    let half = match fmt.frac_bits() {
        0 => 0,
        f => 1i64 << (f - 1),
    };
    let _ = write!(
        out,
        "  constant N        : natural := {n};\n  \
         constant F        : natural := {f};\n  \
         constant P        : natural := {p};\n  \
         constant OVERHEAD : natural := {k};\n  \
         constant ACC_W    : natural := {acc_w};\n  \
         constant MAX_CODE : signed(N-1 downto 0) := {max};\n  \
         constant MIN_CODE : signed(N-1 downto 0) := {min};\n  \
         constant ROUND    : signed(N-1 downto 0) := {round};\n\n",
        n = fmt.total_bits(),
        f = fmt.frac_bits(),
        p = ctx.parallel,
        k = ctx.overhead,
        max = ctx.lit(fmt.max_code() as i64),
        min = ctx.lit(fmt.min_code() as i64),
        round = ctx.lit(half),
    );
    out.push_str(
        "  -- round half up, then saturate to N bits
  function requant(a : signed) return signed is
    variable r : signed(a'length-1 downto 0);
  begin
    r := shift_right(a + resize(ROUND, a'length), F);
    if r > resize(MAX_CODE, a'length) then
      return MAX_CODE;
    elsif r < resize(MIN_CODE, a'length) then
      return MIN_CODE;
    end if;
    return resize(r, N);
  end function;

  function elem(v : std_logic_vector; i : natural) return signed is
  begin
    return signed(v(i*N+N-1 downto i*N));
  end function;
",
    );
}

fn activation_decls(out: &mut String, ctx: &Ctx) {
    let fmt = ctx.fmt;
    let one = fmt.saturate(1i128 << fmt.frac_bits()).0;
    let neg_one = fmt.saturate(-(1i128 << fmt.frac_bits())).0;
    let half = match fmt.frac_bits() {
        0 => 0,
        f => 1i64 << (f - 1),
    };
    let _ = write!(
        out,
        "
  constant ONE     : signed(N-1 downto 0) := {one};
  constant NEG_ONE : signed(N-1 downto 0) := {neg_one};
  constant HALF    : signed(N-1 downto 0) := {half};
  constant ZERO    : signed(N-1 downto 0) := (others => '0');

  function hard_sigmoid(x : signed(N-1 downto 0)) return signed is
    variable s : signed(N-1 downto 0);
  begin
    s := shift_right(x, 2) + HALF;
    if s < ZERO then
      return ZERO;
    elsif s > ONE then
      return ONE;
    end if;
    return s;
  end function;

  function hard_tanh(x : signed(N-1 downto 0)) return signed is
  begin
    if x < NEG_ONE then
      return NEG_ONE;
    elsif x > ONE then
      return ONE;
    end if;
    return x;
  end function;

  function relu(x : signed(N-1 downto 0)) return signed is
  begin
    if x < ZERO then
      return ZERO;
    end if;
    return x;
  end function;
",
        one = ctx.lit(one as i64),
        neg_one = ctx.lit(neg_one as i64),
        half = ctx.lit(half),
    );
}

fn activation_call(kind: ActivationKind) -> &'static str {
    match kind {
        ActivationKind::HardSigmoid => "hard_sigmoid",
        ActivationKind::HardTanh => "hard_tanh",
        ActivationKind::ReLU => "relu",
    }
}

fn rom_constant(out: &mut String, prefix: &str, suffix: &str, t: &QuantizedTensor) {
    let n = t.format.total_bits();
    let upper = prefix.to_uppercase();
    let _ = writeln!(out, "  constant {upper}_{suffix}_DEPTH : natural := {};", t.len());
    let _ = writeln!(
        out,
        "  type {prefix}_{s}_rom_t is array (0 to {upper}_{suffix}_DEPTH-1) of std_logic_vector({}-1 downto 0);",
        n,
        s = suffix.to_lowercase(),
    );
    if t.is_empty() {
        let _ = writeln!(
            out,
            "  constant {upper}_{suffix} : {prefix}_{s}_rom_t := (others => (others => '0'));",
            s = suffix.to_lowercase()
        );
    } else {
        let _ = writeln!(
            out,
            "  constant {upper}_{suffix} : {prefix}_{s}_rom_t := (",
            s = suffix.to_lowercase()
        );
        out.push_str(&render_rom(t));
        out.push_str("  );\n");
    }
}

/// Weight and bias ROM package for layer `name`.
pub(crate) fn rom_package(name: &str, weights: &QuantizedTensor, bias: &QuantizedTensor) -> String {
    let mut out = String::new();
    libraries(&mut out);
    let _ = writeln!(out, "\npackage rom_{name}_pkg is");
    rom_constant(&mut out, name, "W", weights);
    out.push('\n');
    rom_constant(&mut out, name, "B", bias);
    let _ = writeln!(out, "end package rom_{name}_pkg;");
    out
}

pub(crate) fn linear_entity(name: &str, in_len: usize, out_len: usize, ctx: &Ctx) -> String {
    let n = ctx.n();
    let upper = name.to_uppercase();
    let chunks = in_len.div_ceil(ctx.parallel);
    let acc_w = accumulator_bits(ctx.fmt, in_len) + 1;
    let mut out = String::new();
    libraries(&mut out);
    let _ = writeln!(out, "use work.rom_{name}_pkg.all;");
    entity_decl(&mut out, name, in_len, out_len, n);
    let _ = writeln!(out, "\narchitecture rtl of {name} is");
    fixed_decls(&mut out, ctx, acc_w);
    let _ = write!(
        out,
        "
  constant IN_LEN  : natural := {in_len};
  constant OUT_LEN : natural := {out_len};
  constant CHUNKS  : natural := {chunks};

  type state_t is (S_IDLE, S_MAC, S_DRAIN);
  signal state : state_t := S_IDLE;
  signal row   : natural range 0 to OUT_LEN-1 := 0;
  signal chunk : natural range 0 to CHUNKS-1 := 0;
  signal drain : natural range 0 to OVERHEAD := 0;
  signal acc   : signed(ACC_W-1 downto 0) := (others => '0');
  signal y_reg : std_logic_vector(OUT_LEN*N-1 downto 0) := (others => '0');
begin
  y_out <= y_reg;

  -- one MAC group of width P, reused across every output row
  datapath : process (clk)
    variable sum : signed(ACC_W-1 downto 0);
    variable col : natural;
  begin
    if rising_edge(clk) then
      done <= '0';
      if rst = '1' then
        state <= S_IDLE;
      else
        case state is
          when S_IDLE =>
            if start = '1' then
              row   <= 0;
              chunk <= 0;
              acc   <= shift_left(resize(signed({upper}_B(0)), ACC_W), F);
              state <= S_MAC;
            end if;
          when S_MAC =>
            sum := acc;
            for p_i in 0 to P-1 loop
              col := chunk*P + p_i;
              if col < IN_LEN then
                sum := sum + resize(signed({upper}_W(row*IN_LEN + col)) * elem(x_in, col), ACC_W);
              end if;
            end loop;
            if chunk = CHUNKS-1 then
              y_reg(row*N+N-1 downto row*N) <= std_logic_vector(requant(sum));
              chunk <= 0;
              if row = OUT_LEN-1 then
                drain <= 0;
                state <= S_DRAIN;
              else
                row <= row + 1;
                acc <= shift_left(resize(signed({upper}_B(row+1)), ACC_W), F);
              end if;
            else
              acc   <= sum;
              chunk <= chunk + 1;
            end if;
          when S_DRAIN =>
            if drain + 2 >= OVERHEAD then
              done  <= '1';
              state <= S_IDLE;
            else
              drain <= drain + 1;
            end if;
        end case;
      end if;
    end if;
  end process;
end architecture rtl;
"
    );
    out
}

pub(crate) fn lstm_entity(
    name: &str,
    input_size: usize,
    hidden: usize,
    steps: usize,
    ctx: &Ctx,
) -> String {
    let n = ctx.n();
    let upper = name.to_uppercase();
    let cols = input_size + hidden;
    let chunks = cols.div_ceil(ctx.parallel);
    let acc_w = accumulator_bits(ctx.fmt, cols) + 1;
    let mut out = String::new();
    libraries(&mut out);
    let _ = writeln!(out, "use work.rom_{name}_pkg.all;");
    entity_decl(&mut out, name, steps * input_size, hidden, n);
    let _ = writeln!(out, "\narchitecture rtl of {name} is");
    fixed_decls(&mut out, ctx, acc_w);
    activation_decls(&mut out, ctx);
    let _ = write!(
        out,
        "
  constant IN_LEN : natural := {input_size};
  constant HID    : natural := {hidden};
  constant STEPS  : natural := {steps};
  constant ROWS   : natural := 4*HID;
  constant COLS   : natural := IN_LEN + HID;
  constant CHUNKS : natural := {chunks};
  constant EW_W   : natural := 2*N + 2;

  type vec_t is array (natural range <>) of signed(N-1 downto 0);
  type state_t is (S_IDLE, S_GATE, S_ELEM, S_DRAIN);
  signal state : state_t := S_IDLE;
  signal step  : natural range 0 to STEPS-1 := 0;
  signal row   : natural range 0 to ROWS-1 := 0;
  signal chunk : natural range 0 to CHUNKS-1 := 0;
  signal unit  : natural range 0 to HID-1 := 0;
  signal phase : natural range 0 to 8 := 0;
  signal drain : natural range 0 to OVERHEAD := 0;
  signal acc   : signed(ACC_W-1 downto 0) := (others => '0');
  -- gate pre-activations, rows ordered i, f, g, o
  signal z     : vec_t(0 to ROWS-1) := (others => (others => '0'));
  signal h_reg : vec_t(0 to HID-1) := (others => (others => '0'));
  signal c_reg : vec_t(0 to HID-1) := (others => (others => '0'));
  signal ig, fg, gg, og, tc : signed(N-1 downto 0) := (others => '0');
  signal p1, p2, p3 : signed(2*N-1 downto 0) := (others => '0');
begin
  pack : process (h_reg)
  begin
    for k in 0 to HID-1 loop
      y_out(k*N+N-1 downto k*N) <= std_logic_vector(h_reg(k));
    end loop;
  end process;

  datapath : process (clk)
    variable sum : signed(ACC_W-1 downto 0);
    variable col : natural;
    variable cn  : signed(N-1 downto 0);
  begin
    if rising_edge(clk) then
      done <= '0';
      if rst = '1' then
        state <= S_IDLE;
      else
        case state is
          when S_IDLE =>
            if start = '1' then
              step  <= 0;
              row   <= 0;
              chunk <= 0;
              h_reg <= (others => (others => '0'));
              c_reg <= (others => (others => '0'));
              acc   <= shift_left(resize(signed({upper}_B(0)), ACC_W), F);
              state <= S_GATE;
            end if;
          when S_GATE =>
            -- gate rows over [x_t, h], P columns per cycle
            sum := acc;
            for p_i in 0 to P-1 loop
              col := chunk*P + p_i;
              if col < IN_LEN then
                sum := sum + resize(signed({upper}_W(row*COLS + col)) * elem(x_in, step*IN_LEN + col), ACC_W);
              elsif col < COLS then
                sum := sum + resize(signed({upper}_W(row*COLS + col)) * h_reg(col - IN_LEN), ACC_W);
              end if;
            end loop;
            if chunk = CHUNKS-1 then
              z(row) <= requant(sum);
              chunk  <= 0;
              if row = ROWS-1 then
                unit  <= 0;
                phase <= 0;
                state <= S_ELEM;
              else
                row <= row + 1;
                acc <= shift_left(resize(signed({upper}_B(row+1)), ACC_W), F);
              end if;
            else
              acc   <= sum;
              chunk <= chunk + 1;
            end if;
          when S_ELEM =>
            -- nine cycles per hidden unit
            case phase is
              when 0 => ig <= hard_sigmoid(z(unit));
              when 1 => fg <= hard_sigmoid(z(HID + unit));
              when 2 => gg <= hard_tanh(z(2*HID + unit));
              when 3 => og <= hard_sigmoid(z(3*HID + unit));
              when 4 => p1 <= fg * c_reg(unit);
              when 5 => p2 <= ig * gg;
              when 6 =>
                cn := requant(resize(p1, EW_W) + resize(p2, EW_W));
                c_reg(unit) <= cn;
                tc <= hard_tanh(cn);
              when 7 => p3 <= og * tc;
              when others => h_reg(unit) <= requant(resize(p3, EW_W));
            end case;
            if phase = 8 then
              phase <= 0;
              if unit = HID-1 then
                if step = STEPS-1 then
                  drain <= 0;
                  state <= S_DRAIN;
                else
                  step  <= step + 1;
                  row   <= 0;
                  chunk <= 0;
                  acc   <= shift_left(resize(signed({upper}_B(0)), ACC_W), F);
                  state <= S_GATE;
                end if;
              else
                unit <= unit + 1;
              end if;
            else
              phase <= phase + 1;
            end if;
          when S_DRAIN =>
            if drain + 2 >= OVERHEAD then
              done  <= '1';
              state <= S_IDLE;
            else
              drain <= drain + 1;
            end if;
        end case;
      end if;
    end if;
  end process;
end architecture rtl;
"
    );
    out
}

pub(crate) fn activation_entity(name: &str, kind: ActivationKind, len: usize, ctx: &Ctx) -> String {
    let n = ctx.n();
    let chunks = len.div_ceil(ctx.parallel);
    let mut out = String::new();
    libraries(&mut out);
    entity_decl(&mut out, name, len, len, n);
    let _ = writeln!(out, "\narchitecture rtl of {name} is");
    fixed_decls(&mut out, ctx, 2 * n);
    activation_decls(&mut out, ctx);
    let _ = write!(
        out,
        "
  constant LEN    : natural := {len};
  constant CHUNKS : natural := {chunks};

  type state_t is (S_IDLE, S_ACT, S_DRAIN);
  signal state : state_t := S_IDLE;
  signal chunk : natural range 0 to CHUNKS-1 := 0;
  signal drain : natural range 0 to OVERHEAD := 0;
  signal y_reg : std_logic_vector(LEN*N-1 downto 0) := (others => '0');
begin
  y_out <= y_reg;

  datapath : process (clk)
    variable idx : natural;
  begin
    if rising_edge(clk) then
      done <= '0';
      if rst = '1' then
        state <= S_IDLE;
      else
        case state is
          when S_IDLE =>
            if start = '1' then
              chunk <= 0;
              state <= S_ACT;
            end if;
          when S_ACT =>
            for p_i in 0 to P-1 loop
              idx := chunk*P + p_i;
              if idx < LEN then
                y_reg(idx*N+N-1 downto idx*N) <= std_logic_vector({call}(elem(x_in, idx)));
              end if;
            end loop;
            if chunk = CHUNKS-1 then
              drain <= 0;
              state <= S_DRAIN;
            else
              chunk <= chunk + 1;
            end if;
          when S_DRAIN =>
            if drain + 2 >= OVERHEAD then
              done  <= '1';
              state <= S_IDLE;
            else
              drain <= drain + 1;
            end if;
        end case;
      end if;
    end if;
  end process;
end architecture rtl;
",
        call = activation_call(kind),
    );
    out
}

/// One instantiated layer of the top-level chain.
pub(crate) struct Stage {
    pub entity: String,
    pub out_len: usize,
}

pub(crate) fn top_entity(input_len: usize, stages: &[Stage], ctx: &Ctx) -> String {
    let n = ctx.n();
    let out_len = stages.last().map(|s| s.out_len).unwrap_or(input_len);
    let mut out = String::new();
    libraries(&mut out);
    entity_decl(&mut out, "top", input_len, out_len, n);
    out.push_str("\narchitecture rtl of top is\n");
    for (k, s) in stages.iter().enumerate() {
        let _ = writeln!(
            out,
            "  signal y{k} : std_logic_vector({}*{n}-1 downto 0);\n  signal d{k} : std_logic;",
            s.out_len
        );
    }
    out.push_str("begin\n");
    for (k, s) in stages.iter().enumerate() {
        let (start, x) = if k == 0 {
            ("start".to_string(), "x_in".to_string())
        } else {
            (format!("d{}", k - 1), format!("y{}", k - 1))
        };
        let _ = writeln!(
            out,
            "  u{k} : entity work.{e}\n    port map (\n      clk   => clk,\n      rst   => rst,\n      \
             start => {start},\n      x_in  => {x},\n      y_out => y{k},\n      done  => d{k}\n    );\n",
            e = s.entity
        );
    }
    let last = stages.len().saturating_sub(1);
    let _ = writeln!(out, "  y_out <= y{last};\n  done  <= d{last};");
    out.push_str("end architecture rtl;\n");
    out
}

pub(crate) fn synth_script(
    model_name: &str,
    sources: &[String],
    part: &str,
    clock_mhz: f64,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Synthesis stub for {model_name}. Generated by nnaccel. Do not edit.");
    out.push_str("# Device specifics live only in this file; the VHDL is vendor neutral.\n");
    out.push_str("# Run with: vivado -mode batch -source synth.tcl\n\n");
    let _ = writeln!(out, "set part {part}");
    out.push_str("read_vhdl -vhdl2008 [list \\\n");
    for s in sources {
        let _ = writeln!(out, "  {s} \\");
    }
    out.push_str("]\n");
    out.push_str("synth_design -top top -part $part\n");
    let _ = writeln!(
        out,
        "create_clock -name clk -period {:.3} [get_ports clk]",
        1000.0 / clock_mhz
    );
    out.push_str("report_utilization -file utilization.rpt\n");
    out.push_str("report_timing_summary -file timing.rpt\n");
    out.push_str("report_power -file power.rpt\n");
    out
}
