//! Self-checking testbench with golden vectors embedded as constants.

use std::fmt::Write;

use super::rom::literal;
use super::vhdl::HEADER;
use super::RtlError;
use crate::estimator::{cycle_count, GenConfig};
use crate::fixsim::infer_fixed;
use crate::quantizer::QuantizedModel;

/// Flattened vector literal, element 0 in the least significant position.
pub fn vector_literal(codes: &[i32], bits: u32) -> String {
    codes
        .iter()
        .rev()
        .map(|&c| literal(c as i64, bits))
        .collect::<Vec<_>>()
        .join(" & ")
}

/// Deterministic stimulus vectors: an all-zero vector followed by
/// pseudo-random codes spanning `[-1, 1)` in the model's format.
pub fn golden_vectors(model: &QuantizedModel, count: usize, seed: u64) -> Vec<Vec<i32>> {
    let fmt = model.format;
    let len = model.input_len();
    let one = (1i64 << fmt.frac_bits()).min(fmt.max_code() as i64 + 1);
    let mut state = seed;
    let mut next = || {
        // splitmix64
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    let mut out = vec![vec![0; len]];
    for _ in 1..count {
        out.push(
            (0..len)
                .map(|_| ((next() % (2 * one as u64)) as i64 - one) as i32)
                .collect(),
        );
    }
    out.truncate(count);
    out
}

pub fn generate_testbench(
    model: &QuantizedModel,
    cfg: &GenConfig,
    vectors: &[Vec<i32>],
) -> Result<String, RtlError> {
    if vectors.is_empty() {
        return Err(RtlError::NoVectors);
    }
    let n = model.format.total_bits();
    let in_len = model.input_len();
    let out_len = model.output_len();
    let mut expected = Vec::with_capacity(vectors.len());
    for v in vectors {
        if v.len() != in_len {
            return Err(RtlError::InputLengthMismatch {
                expected: in_len,
                got: v.len(),
            });
        }
        let (y, _) = infer_fixed(model, v).map_err(|e| RtlError::Golden(e.to_string()))?;
        expected.push(y);
    }
    let cycles = cycle_count(model, cfg);
    let period_ps = (1e6 / cfg.clock_mhz).round() as u64;

    let mut out = String::new();
    out.push_str(HEADER);
    out.push_str("library ieee;\nuse ieee.std_logic_1164.all;\nuse ieee.numeric_std.all;\n\n");
    out.push_str("entity tb_top is\nend entity tb_top;\n\narchitecture sim of tb_top is\n");
    let _ = write!(
        out,
        "  constant N               : natural := {n};\n  \
         constant IN_LEN          : natural := {in_len};\n  \
         constant OUT_LEN         : natural := {out_len};\n  \
         constant EXPECTED_CYCLES : natural := {cycles};\n  \
         constant CLK_PERIOD      : time := {period_ps} ps;\n\n  \
         type in_vec_t is array (natural range <>) of std_logic_vector(IN_LEN*N-1 downto 0);\n  \
         type out_vec_t is array (natural range <>) of std_logic_vector(OUT_LEN*N-1 downto 0);\n\n"
    );
    constant_table(&mut out, "STIMULI", "in_vec_t", vectors, n);
    out.push('\n');
    constant_table(&mut out, "EXPECTED", "out_vec_t", &expected, n);
    out.push_str(
        "
  signal clk     : std_logic := '0';
  signal rst     : std_logic := '1';
  signal start   : std_logic := '0';
  signal done    : std_logic;
  signal x_in    : std_logic_vector(IN_LEN*N-1 downto 0) := (others => '0');
  signal y_out   : std_logic_vector(OUT_LEN*N-1 downto 0);
  signal running : boolean := true;
begin
  clk <= not clk after CLK_PERIOD / 2 when running else '0';

  dut : entity work.top
    port map (
      clk   => clk,
      rst   => rst,
      start => start,
      x_in  => x_in,
      y_out => y_out,
      done  => done
    );

  stim : process
    variable cycles : natural;
    variable errors : natural := 0;
  begin
    wait until rising_edge(clk);
    wait until falling_edge(clk);
    rst <= '0';
    for v in STIMULI'range loop
      x_in  <= STIMULI(v);
      start <= '1';
      cycles := 0;
      loop
        wait until rising_edge(clk);
        cycles := cycles + 1;
        wait until falling_edge(clk);
        start <= '0';
        exit when done = '1';
      end loop;
      if y_out /= EXPECTED(v) then
        errors := errors + 1;
        report \"vector \" & integer'image(v) & \": output mismatch\" severity error;
      end if;
      if cycles /= EXPECTED_CYCLES then
        errors := errors + 1;
        report \"vector \" & integer'image(v) & \": \" & integer'image(cycles) &
          \" cycles, expected \" & integer'image(EXPECTED_CYCLES) severity error;
      end if;
      report \"vector \" & integer'image(v) & \" done in \" & integer'image(cycles) & \" cycles\";
    end loop;
    if errors = 0 then
      report \"tb_top: PASS\";
    else
      report \"tb_top: FAIL with \" & integer'image(errors) & \" errors\" severity failure;
    end if;
    running <= false;
    wait;
  end process;
end architecture sim;
",
    );
    Ok(out)
}

fn constant_table(out: &mut String, name: &str, ty: &str, rows: &[Vec<i32>], bits: u32) {
    let _ = writeln!(out, "  constant {name} : {ty}(0 to {}) := (", rows.len() - 1);
    for (k, row) in rows.iter().enumerate() {
        let sep = if k + 1 < rows.len() { "," } else { "" };
        let _ = writeln!(out, "    {k} => {}{sep}", vector_literal(row, bits));
    }
    out.push_str("  );\n");
}

/// Extracts the `EXPECTED` table from a generated testbench as code vectors.
pub fn parse_expected(tb: &str, bits: u32) -> Vec<Vec<i64>> {
    table_rows(tb, "EXPECTED", bits)
}

/// Extracts the `STIMULI` table from a generated testbench as code vectors.
pub fn parse_stimuli(tb: &str, bits: u32) -> Vec<Vec<i64>> {
    table_rows(tb, "STIMULI", bits)
}

fn table_rows(tb: &str, name: &str, bits: u32) -> Vec<Vec<i64>> {
    let header = format!("constant {name} :");
    let Some(start) = tb.find(&header) else {
        return Vec::new();
    };
    tb[start..]
        .lines()
        .skip(1)
        .take_while(|l| l.trim() != ");")
        .map(|l| {
            let body = l.split_once("=>").map(|(_, b)| b).unwrap_or("");
            let mut v = super::rom::parse_literals(body, bits);
            v.reverse();
            v
        })
        .collect()
}
