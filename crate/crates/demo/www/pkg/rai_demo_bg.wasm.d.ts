/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_sim_free: (a: number, b: number) => void;
export const detour: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number];
export const sim_from_json: (a: number, b: number) => [number, number, number];
export const sim_navigate_to: (a: number, b: number, c: number) => [number, number];
export const sim_new: (a: number, b: number) => [number, number, number];
export const sim_object_at: (a: number, b: number, c: number) => [number, number];
export const sim_pick: (a: number, b: number, c: number) => [number, number, number, number];
export const sim_place_at: (a: number, b: number, c: number) => [number, number, number, number];
export const sim_place_on: (a: number, b: number, c: number) => [number, number, number, number];
export const sim_snapshot: (a: number) => [number, number];
export const sim_state_hash: (a: number) => [number, number];
export const sim_step: (a: number, b: number) => [number, number];
export const sim_tick: (a: number) => bigint;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
