import { LabelApi } from "./api.js";
import { AppController } from "./state.js";
import { AppView } from "./ui.js";

const api = new LabelApi("");
const controller = new AppController(api);
const mount = document.getElementById("app");
if (!mount) throw new Error("missing #app mount point");
new AppView(api, controller, mount);
void controller.refreshIndividuals();
