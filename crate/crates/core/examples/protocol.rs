//! Parse model turns and render tool calls.

use glance_zoom::protocol::{extract_answer, parse_turn, render_tool_call, validate_format, Action, ToolCall};

fn main() {
    let call = ToolCall::new(12.5, 16.5, 4.0);
    let text = format!("<think>The ball leaves the frame near 14s.</think>{}", render_tool_call(&call));
    println!("rendered: {text}");

    let turns = [
        parse_turn(&text),
        parse_turn("<answer>B</answer>"),
        parse_turn("<think>Counted three.</think><answer>\\boxed{C}</answer>"),
    ];
    for t in &turns {
        match &t.action {
            Action::ToolUse(c) => println!("tool use: [{}, {}] at {} fps, {} frames", c.t_start, c.t_end, c.fps, c.requested_frames()),
            Action::Answer(a) => println!("answer: {}", extract_answer(a)),
            Action::Malformed(r) => println!("malformed: {r:?}"),
        }
    }
    let verdict = validate_format(&turns);
    println!("format ok: {} ({:?})", verdict.ok, verdict.per_turn);
}
