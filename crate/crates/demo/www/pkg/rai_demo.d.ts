/* tslint:disable */
/* eslint-disable */

export class Sim {
    free(): void;
    [Symbol.dispose](): void;
    static from_json(text: string): Sim;
    navigate_to(x: number, y: number): void;
    /**
     * Loads a bundled world by name.
     */
    constructor(name: string);
    /**
     * Id of the object under (x, y), topmost first.
     */
    object_at(x: number, y: number): string | undefined;
    /**
     * Returns the placed/picked object as JSON, or the error text
     * starting with its code (for example `OVERLAP: ...`).
     */
    pick(id: string): string;
    place_at(x: number, y: number): string;
    place_on(id: string): string;
    /**
     * Compact state for drawing.
     */
    snapshot(): string;
    state_hash(): string;
    /**
     * Advances `n` ticks and returns the navigation status, or "idle".
     */
    step(n: number): string;
    tick(): bigint;
}

/**
 * Detour from `from` to `to` around a box centred at (cx, cy) with half
 * extents (hx, hy), kept `clearance` away. JSON object with `waypoints`
 * and the measured minimum `clearance`, or `null` when no detour exists.
 */
export function detour(fx: number, fy: number, tx: number, ty: number, cx: number, cy: number, hx: number, hy: number, clearance: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_sim_free: (a: number, b: number) => void;
    readonly detour: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number];
    readonly sim_from_json: (a: number, b: number) => [number, number, number];
    readonly sim_navigate_to: (a: number, b: number, c: number) => [number, number];
    readonly sim_new: (a: number, b: number) => [number, number, number];
    readonly sim_object_at: (a: number, b: number, c: number) => [number, number];
    readonly sim_pick: (a: number, b: number, c: number) => [number, number, number, number];
    readonly sim_place_at: (a: number, b: number, c: number) => [number, number, number, number];
    readonly sim_place_on: (a: number, b: number, c: number) => [number, number, number, number];
    readonly sim_snapshot: (a: number) => [number, number];
    readonly sim_state_hash: (a: number) => [number, number];
    readonly sim_step: (a: number, b: number) => [number, number];
    readonly sim_tick: (a: number) => bigint;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
